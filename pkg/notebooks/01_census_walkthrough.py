# %% [markdown]
# # One passage, five questions
#
# The bundled census passage carries a question of each answer type.  Here
# we tokenize it, search for the labels that explain each gold answer, then
# decode from oracle head outputs built from those labels.

# %%
from dropforge.annotator import annotate_example
from dropforge.decoder import decode_answer
from dropforge.harness import bundled_dataset_bytes, oracle_head_outputs, oracle_reranker
from dropforge.ingest import examples_from_dataset, parse_drop_dataset

examples = examples_from_dataset(parse_drop_dataset(bundled_dataset_bytes()))
ex = examples[2]
print(ex.question_text)
print([n.value for n in ex.numbers])

# %%
# the sequence is [CLS] question [SEP] passage [SEP]
print(len(ex.sequence), ex.sep1_index, ex.sep2_index)

# %% [markdown]
# Annotation lists every labelling consistent with the gold answer.

# %%
for ex in examples:
    ann = annotate_example(ex)
    print(ex.example_id, ex.golds[0].texts(), ann.to_json(ex.example_id))

# %%
for ex in examples:
    ann = annotate_example(ex)
    pred = decode_answer(ex, oracle_head_outputs(ex, ann), oracle_reranker(ann))
    print(f"{ex.question_text:55s} {pred.answer_type:9s} {pred.answer_texts}")
