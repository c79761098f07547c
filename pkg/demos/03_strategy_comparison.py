# Hard vs soft vs stochastic masks, and a uniform split, from one pretrained supernet.
# Prints a small AUC-vs-size table like the CLI's `curve` command.

import numpy as np

from hamprune import FieldSpec, SearchConfig, build_model, pretrain, run_baseline, split, synthesize

fields = [FieldSpec(40, 6, 1.0), FieldSpec(40, 6, 1.0), FieldSpec(40, 2, 1.0), FieldSpec(40, 0)]
ds = synthesize(fields, 20000, seed=1)
train, val, test = split(ds, seed=1)

base = SearchConfig(batch_size=256, lr=3e-3, alpha_lr=1e-2, pretrain_epochs=40,
                    retrain_epochs=30, search_eval_every=20, seed=1)
supernet = build_model("fm", ds.schema.cardinalities, [6] * 4, seed=1)
pretrain(supernet, train, val, base)

rows = []
for s in (6, 12, 18):
    for strategy in ("ham", "sam", "sam-gs", "ham-p", "uniform"):
        rep = run_baseline(strategy, train, val, test, base.replace(target_size=s), pretrained=supernet)
        rows.append((strategy, s, rep.test_auc, rep.embedding_params, rep.selected_dims))

# ham retrains on sign(alpha), so its size can miss s when the search stops outside the window;
# the baselines always keep exactly the top-s columns
print("%-8s %3s %8s %7s  dims" % ("strategy", "s", "auc", "params"))
for strategy, s, a, p, dims in rows:
    print("%-8s %3d %8.4f %7d  %s" % (strategy, s, a, p, dims))

# uniform spends columns on the noise field; the searched masks mostly don't
noise = {r[0]: r[4][3] for r in rows if r[1] == 12}
print("noise-field columns at s=12:", noise)
