# %% [markdown]
# # A walk through one retrieval-augmented step
#
# We build a small synthetic knowledge task, pretrain the dual encoder with
# in-batch negatives, and then look inside a single joint training example:
# which retrieved documents land in P+ and P-, and which way the loss pushes
# their scores.
#
# Run as a script (`python3 notebooks/01_walkthrough.py`) or open it in any
# editor that understands `# %%` cells.

# %%
import numpy as np

from ravqa.dataio import build_full_query
from ravqa.index import build_index
from ravqa.inference import decode_joint, retrieve
from ravqa.joint import Variant, ravqa_loss
from ravqa.pipeline import desk_scale, run_pretrain, run_train, split
from ravqa.synth import SynthConfig, generate_synthetic_task

SEED = 0
synth = SynthConfig(n_entities=40, n_distractors=200, n_train=200, n_test=60)
corpus, examples = generate_synthetic_task(synth, SEED)
len(corpus), len(split(examples, "train")), len(split(examples, "test"))

# %% [markdown]
# Each knowledge question asks for one attribute of one entity. The fact
# sits in a single document; the other documents are noise.

# %%
ex = split(examples, "train")[0]
print(ex.question)
print(ex.answers.entries)
gold = ex.answers.answers[0]
print([d.doc_id for d in corpus.containing(gold)][:5])

# %% [markdown]
# ## Pretraining
#
# Queries are paired with a document containing one of their answers; the
# other documents in the batch act as negatives.

# %%
cfg = desk_scale()
cfg.pretrain["epochs"] = 3
enc, index, log = run_pretrain(corpus, examples, cfg, SEED)
print([round(r["mean_loss"], 3) for r in log])

# %%
query = build_full_query(ex)
ret = retrieve(enc, index, query, 5)
for d, s, lp in zip(ret.doc_ids, ret.scores, ret.log_probs):
    print(d, round(float(s), 3), round(float(np.exp(lp)), 3), corpus[d].contains(gold))

# %% [markdown]
# ## One joint step
#
# With an untrained answer scorer the partition is driven mostly by whether a
# document contains a target answer. Here none of the five retrieved
# documents does, so all of them land in P-.
#
# The derivative with respect to score k is (|P+| - |P-|) p_k, plus 1 on P-
# (minus 1 on P+). With |P-| = 5 and |P+| = 0 it turns negative for the
# most probable documents: a descent step raises their scores even though
# they are pushed-down documents. The sign pattern people expect only holds
# when the two sets are close in size.

# %%
_, gen, _ = run_train(None, None, corpus, examples, cfg, SEED, variant=Variant.RA_VQA_NoDPR,
                      epochs=1)
docs = [corpus[d] for d in ret.doc_ids]
vecs = index.matrix[[index.doc_ids.index(d) for d in ret.doc_ids]]
res = ravqa_loss(enc, gen, query, ex.answers, docs, vecs, Variant.RA_VQA)
d = res.diagnostics
print("P+", sorted(d["partition"].p_plus), "P-", sorted(d["partition"].p_minus))
print("dL/dscore", np.round(d["d_scores_retrieval"], 4))

# %% [markdown]
# ## Joint training and decoding

# %%
q_enc, gen, rows = run_train(enc, index, corpus, examples, cfg, SEED, variant=Variant.RA_VQA)
test = split(examples, "test")
hits = 0
for e in test:
    dec = decode_joint(q_enc, gen, index, corpus, build_full_query(e), 5)
    hits += dec.answer in e.answers.answers
print("EM", hits / len(test))
