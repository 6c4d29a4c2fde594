"""The synthetic corpus and the holdout + 9-fold split machinery.

Run: python demos/04_synthetic_data_and_splits.py
"""
from collections import Counter

from ultraseg import kfold_stratified, split_holdout, synth_generate

# Desk-scale stand-in for a clinical ultrasound corpus: smooth ellipses for
# benign lesions, spiculated stars for malignant, plain speckle for normal.
records = synth_generate(6, image_size=128, seed=7)
print(f"generated {len(records)} records")
for rec in records[::6]:
    boxes = [inst.tight_box for inst in rec.instances]
    print(f"  {rec.id}: label={rec.label}, instances={len(rec.instances)}, tight={boxes}")

# 80/10/10 stratified holdout, remainders assigned largest-fraction-first.
items = [(rec.id, rec.label) for rec in records]
hold = split_holdout(items, seed=1)
print(f"\nholdout sizes: train={len(hold.train)} val={len(hold.val)} test={len(hold.test)}")

# The train+val pool is then cut into 9 class-stratified folds; every
# (train = 8 folds, validation = 1 fold) pair comes from cv_pairs().
pool = [(rid, label) for rid, label in items if rid in set(hold.trainval)]
folds = kfold_stratified(pool, k=3, seed=1, test_ids=hold.test)  # k=3 here; default is 9
for i, fold in enumerate(folds.folds):
    counts = Counter(rid.split("__")[0] for rid in fold)
    print(f"fold {i}: {dict(sorted(counts.items()))}")
train_ids, val_ids = folds.cv_pairs()[0]
print(f"cv pair 0: train={len(train_ids)} validation={len(val_ids)}")
print("\nsame seed, same split: ", split_holdout(items, seed=1) == hold)
