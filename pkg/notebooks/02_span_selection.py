# %% [markdown]
# # Picking several spans
#
# Candidates come from the start/end distributions; NMS keeps the best one
# and drops every remaining candidate sharing a token with it, until the
# predicted span count is reached.

# %%
import numpy as np

from dropforge.decoder import nms_multi_span, top_k_spans
from dropforge.ingest import MARKER, make_example

ex = make_example("demo", "p", "Which groups?", "German people and Irish people lived there")
T = len(ex.sequence)
print([(i, t.text) for i, t in enumerate(ex.sequence)])

# %%
p_start = np.full(T, 0.01)
p_end = np.full(T, 0.01)
p_start[[5, 8]] = [0.5, 0.4]
p_end[[5, 6, 8, 9]] = [0.3, 0.35, 0.3, 0.2]
p_start[[t.origin == MARKER for t in ex.sequence]] = 0
p_start /= p_start.sum()
p_end /= p_end.sum()

for s in top_k_spans(p_start, p_end, 6, 10, ex.sequence):
    print(f"{s.score:.4f}  {s.text}")

# %%
# "Irish people" shares "people" with the first pick, so plain "Irish" goes in
count = np.eye(8)[1]
print([s.text for s in nms_multi_span(p_start, p_end, count, 20, ex.sequence)])

# %%
# a shorter cap on span length lets the bare names through
print([s.text for s in nms_multi_span(p_start, p_end, count, 20, ex.sequence, max_len=1)])
