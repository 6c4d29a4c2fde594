"""Instance segmentation of breast-ultrasound lesions, composed from parts.

An object detector proposes lesion boxes, non-maximum suppression cleans them
up, each surviving box is cropped and routed to the semantic segmenter for
its class, and the predicted mask is pasted back and refined by the box. The
package also ships the dataset machinery around that pipeline: mask-to-box
extraction, stratified splitting, classical augmentation, a synthetic
corpus generator, and Dice/RMSE/mAP evaluation.
"""

from .errors import BackendError, DataError, UsageError
from .geometry import BoundingBox, clip_box, expand_box, from_roi, iou, iou_matrix, to_roi
from .imaging import (
    BinaryMask,
    Image,
    ProbMask,
    connected_components,
    crop,
    paste,
    read_binary_mask_png,
    read_image_png,
    read_prob_mask_png,
    resize,
    threshold,
    to_grayscale,
    write_binary_mask_png,
    write_image_png,
    write_prob_mask_png,
)
from .metrics import (
    EvalReport,
    EvalRow,
    average_precision,
    dice_coefficient,
    dice_loss,
    evaluate_predictions,
    match_detections,
    mean_average_precision,
    pixel_rmse,
    write_report_csv,
    write_report_json,
)
from .dataset import (
    AugmentParams,
    CLASS_NAMES,
    DatasetRecord,
    FoldSplit,
    HoldoutSplit,
    IngestResult,
    Lesion,
    augment,
    ingest,
    instances_from_mask,
    kfold_stratified,
    read_split,
    sample_augment_params,
    split_holdout,
    stable_seed,
    synth_generate,
    write_dataset,
    write_split,
)
from .detection import (
    Detection,
    DetectorBackend,
    OracleDetector,
    StaticDetector,
    nms,
    oracle_detect,
    read_detections_jsonl,
    write_detections_jsonl,
)
from .pipeline import (
    FixedThresholdSegmenter,
    Instance,
    OracleSegmenter,
    OtsuSegmenter,
    PipelineConfig,
    RunResult,
    SegmentContext,
    SegmenterBackend,
    assemble_batch,
    assemble_instance,
    otsu_threshold,
    read_instances,
    read_mask_batch,
    reference_segmenter,
    run_image,
    write_instances,
    write_roi_batch,
)

__version__ = "0.1.0"
