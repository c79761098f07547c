# Searching field-wise embedding sizes on data with a known answer.
#
# Four fields: two carry rank-6 interactions, one rank-2, one is noise.
# Every field starts with 6 embedding columns (24 total); we ask for 12.

import numpy as np

from hamprune import FieldSpec, SearchConfig, build_model, pretrain, retrain, search_stage, split, synthesize

fields = [FieldSpec(40, 6, 1.0), FieldSpec(40, 6, 1.0), FieldSpec(40, 2, 1.0), FieldSpec(40, 0)]
ds = synthesize(fields, 20000, seed=0)
train, val, test = split(ds, seed=0)
print("rows per split:", len(train), len(val), len(test))
print("positive rate: %.3f" % ds.y.mean())

conf = SearchConfig(target_size=12, batch_size=256, lr=3e-3, alpha_lr=1e-2,
                    pretrain_epochs=40, retrain_epochs=30, search_eval_every=20, seed=0)

model = build_model("fm", ds.schema.cardinalities, [6, 6, 6, 6], seed=0)
hist = pretrain(model, train, val, conf)
print("pretrain: %d epochs, best val AUC %.4f" % (len(hist), max(h["val_auc"] for h in hist)))

# alpha starts at +0.01 everywhere (all columns on) and drifts until ~12 stay positive
res = search_stage(model, train, val, conf)
counts = [h["positive_alpha"] for h in res.history]
print("positive alphas during search:", counts[:5], "...", counts[-5:])
print("stopped early:", res.stopped_early, " re-activations:", res.reactivations)

per_field = model.embeddings.layout.per_field(res.mask)
print("columns kept per field:", per_field)   # noise field should end up with few or none

rr = retrain(model, res.mask, train, val, test, conf)
print("pruned model dims:", rr.model.embeddings.dims)
print("test AUC %.4f  logloss %.4f" % (rr.test.auc, rr.test.logloss))
print("embedding params: %d -> %d" % (model.embeddings.count_params(),
                                       model.embeddings.count_params(res.mask)))

# The alpha values themselves are a rough importance score per column
alpha = res.state.values
for j in range(4):
    sl = model.embeddings.layout.field_slice(j)
    print("field %d alpha:" % j, np.round(alpha[sl], 4))
