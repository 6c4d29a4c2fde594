"""Boxes, overlap, and the crop geometry the whole pipeline rests on.

Run: python demos/01_boxes_and_overlap.py
"""
import numpy as np

from ultraseg import BoundingBox, clip_box, expand_box, from_roi, iou, iou_matrix, to_roi

# Boxes are closed-open integer rectangles: (x, y, w, h) covers exactly w*h pixels.
a = BoundingBox(0, 0, 10, 10)
b = BoundingBox(5, 5, 10, 10)
print(f"a = {a}")
print(f"b = {b}")
print(f"iou(a, b) = {iou(a, b):.6f}   (25 shared pixels / 175 covered)")
print(f"iou(a, a) = {iou(a, a)}")

# Dataset boxes are grown by 10 px (5 per side) so crops keep the tissue
# contrast around the lesion edge; growth is clipped at the image border.
tight = BoundingBox(20, 20, 30, 30)
print(f"\nexpand {tight} by 10 in a 100x100 image -> {expand_box(tight, 10, (100, 100))}")
corner = BoundingBox(0, 0, 30, 30)
print(f"expand {corner} at the border           -> {expand_box(corner, 10, (100, 100))}")

# Detections hanging over the edge are clipped before cropping.
print(f"\nclip (-5,-5,20,20) to 100x100 -> {clip_box(BoundingBox(-5, -5, 20, 20), (100, 100))}")

# Image <-> ROI coordinate translation is what pastes predictions back.
roi = BoundingBox(10, 20, 30, 30)
p = (15, 25)
local = to_roi(p, roi)
print(f"\nimage point {p} inside roi {roi} -> roi-local {local} -> back {from_roi(local, roi)}")

# The vectorized form scores many candidate boxes at once (used by NMS tests).
boxes = np.array([[0, 0, 10, 10], [5, 5, 10, 10], [50, 50, 5, 5]])
print("\npairwise IoU matrix:")
print(np.round(iou_matrix(boxes, boxes), 4))
