"""The file exchange protocol that lets real trained models plug in.

The pipeline writes ``rois/*.png`` plus ``manifest.json``; any external
process answers with ``masks/*.png``; the pipeline pastes the masks back into
instances. Here the "external model" is a ten-line inline thresholder -- the
standalone adapter package under ``adapter/`` does the same job as a proper
subprocess tool.

Run: python demos/07_external_adapter_protocol.py
"""
import json
import tempfile
from pathlib import Path

import numpy as np
from PIL import Image as PILImage

from ultraseg import (
    PipelineConfig,
    assemble_batch,
    evaluate_predictions,
    nms,
    oracle_detect,
    read_mask_batch,
    synth_generate,
    write_roi_batch,
)

records = synth_generate(3, image_size=160, seed=23)
cfg = PipelineConfig(roi_size=(64, 64), resize_method="bilinear")

# Step 1: the pipeline side exports post-NMS ROIs and a manifest.
exchange = Path(tempfile.mkdtemp(prefix="exchange_"))
items = []
for rec in records:
    dets = nms(oracle_detect(rec), cfg.conf_thresh, cfg.nms_iou)
    if dets:
        items.append((rec.id, rec.image, dets))
manifest = write_roi_batch(items, exchange, cfg)
print(f"wrote {len(manifest)} ROIs + manifest.json under {exchange}")

# Step 2: the "external model". Lesions are hypoechoic, so dark pixels win.
(exchange / "masks").mkdir()
for entry in json.loads((exchange / "manifest.json").read_text()):
    roi = np.asarray(PILImage.open(exchange / entry["roi"]).convert("L"))
    mask = np.where(roi / 255.0 <= 0.45, 255, 0).astype(np.uint8)
    PILImage.fromarray(mask).save(exchange / "masks" / f"{entry['image_id']}_{entry['k']}.png")
print("external process answered every entry with a mask")

# Step 3: load the masks back, paste them into full-frame instances, score.
loaded, issues = read_mask_batch(exchange)
print(f"read_mask_batch: {len(loaded)} masks loaded, {len(issues)} issues")
per_image = assemble_batch({rec.id: rec.image.size for rec in records}, loaded, cfg)
report = evaluate_predictions(records, per_image)
rounded = {k: round(v, 4) for k, v in report.per_class_dice.items()}
print(f"dice per class: {rounded}")
print(f"map_50: {report.map_50:.4f}")
