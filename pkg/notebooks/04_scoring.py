# %% [markdown]
# # Scoring answers
#
# Answers are compared as bags of spans, aligned one to one.

# %%
from dropforge.ingest import GoldAnswer
from dropforge.metrics import answer_bag, evaluate_example, normalize_answer

gold = [GoldAnswer("spans", span_texts=("German", "Irish"))]
for pred in (["German", "Irish"], ["Irish", "German"], ["German"], ["the Germans"], ["German", "Irish", "Italian"]):
    print(pred, evaluate_example(pred, gold))

# %%
print(normalize_answer("138,923"), normalize_answer("The well-known town."))

# %%
# a wrong number scores zero even when other tokens agree
print(evaluate_example(["138924 people"], [GoldAnswer("number", number_text="138923")]))
print(answer_bag(["3 May 1990"]))
