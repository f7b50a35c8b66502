# %% [markdown]
# # Training variants side by side
#
# Every variant shares one pretrained encoder and index. We compare EM, VQA
# score and pseudo-relevance recall on one seed of a mid-sized synthetic task.
# The acceptance suite runs the same comparison over three seeds on the
# default task. Takes about five minutes on one CPU core.

# %%
from ravqa.joint import Variant
from ravqa.pipeline import desk_scale, evaluate, run_pretrain, run_train, sweep
from ravqa.synth import SynthConfig, generate_synthetic_task

SEED = 1
corpus, examples = generate_synthetic_task(
    SynthConfig(n_entities=80, n_distractors=500, n_train=300, n_test=120), SEED)
cfg = desk_scale()
enc, index, _ = run_pretrain(corpus, examples, cfg, SEED)

# %% [markdown]
# The closed-book model (no retrieval) doubles as the reference for the
# hit/failure success split.

# %%
_, closed, _ = run_train(None, None, corpus, examples, cfg, SEED, variant=Variant.RA_VQA_NoDPR)

results = {}
for v in Variant:
    if v is Variant.RA_VQA_NoDPR:
        _, rep = evaluate(None, closed, None, corpus, examples, 5)
    else:
        q_enc, gen, _ = run_train(enc, index, corpus, examples, cfg, SEED, variant=v)
        _, rep = evaluate(q_enc, gen, index, corpus, examples, 5, closed, k_values=[1, 5])
    results[v.value] = rep

print(f"{'variant':<14}{'EM':>8}{'VQA':>8}{'R@5':>8}")
for name, rep in results.items():
    r5 = rep.prrecall_at.get(5, float("nan"))
    print(f"{name:<14}{rep.em:>8.3f}{rep.vqa_score:>8.3f}{r5:>8.3f}")

# %% [markdown]
# ## Retrieving more at test time
#
# Recall can only grow with K_test. EM need not: more documents also mean
# more chances for a confident wrong answer.

# %%
rows = sweep(enc, index, corpus, examples, cfg, SEED, [5], [1, 5, 20], closed_book=closed)
for r in rows:
    if r["metric"] in ("em", "prrecall@1", "prrecall@5", "prrecall@20"):
        print(r["k_test"], r["metric"], round(r["value"], 3))
