"""Masks, connected components, and the crop/resize/paste toolkit.

Run: python demos/02_masks_and_components.py
"""
import numpy as np

from ultraseg import (
    BinaryMask,
    BoundingBox,
    Image,
    ProbMask,
    connected_components,
    crop,
    paste,
    resize,
    threshold,
)

# A ground-truth mask file may hold several lesions; every 8-connected blob
# becomes its own instance with a tight bounding box.
bits = np.zeros((24, 24), dtype=np.uint8)
bits[3:8, 4:10] = 1          # blob one
bits[15:20, 14:21] = 1       # blob two
bits[8, 10] = 1              # diagonal neighbor of blob one -> same component
mask = BinaryMask(bits)
for i, (component, box) in enumerate(connected_components(mask)):
    print(f"component {i}: {component.count()} px, tight box {box}")

# Crop/paste are exact adjoints: paste back what you cropped and nothing moves.
img = Image(np.arange(24 * 24, dtype=np.int64).reshape(24, 24) % 256)
roi = BoundingBox(4, 3, 6, 5)
patch = crop(img, roi)
print(f"\ncrop at {roi}: size {patch.size}, top-left value {patch.pixels[0, 0]}")

canvas = ProbMask.zeros(24, 24)
pasted = paste(canvas, ProbMask(np.ones((5, 6))), roi)
print(f"pasted ones inside roi; pixels set outside roi: "
      f"{int(pasted.pixels.sum() - 30)} (refinement: always 0)")

# Resizing follows one fixed sampling convention (align-corners=false,
# Catmull-Rom bicubic), so outputs are bit-identical across runs.
checker = Image(np.array([[0, 255], [255, 0]], dtype=np.uint8))
print("\n2x2 checkerboard -> 4x4 bilinear:")
print(resize(checker, (4, 4), "bilinear").pixels)

# Probabilities binarize with an inclusive threshold.
probs = ProbMask(np.array([[0.4, 0.5, 0.6]]))
print(f"\nthreshold {probs.pixels.tolist()} at 0.5 -> {threshold(probs, 0.5).pixels.tolist()}")
