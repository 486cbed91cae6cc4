"""Direct dense pose: sparse global IUV estimation, dynamic mask heads, losses,
temporal smoothing and dense-pose evaluation, on numpy."""

from .blob import BlobFormatError, read_tensor, write_tensor
from .evaluation import EvalResult, GpsConfig, evaluate, instance_gps
from .iuv import AnnotatedPoint, LossWeights, iuv_summarize, loss_I, loss_smooth, loss_UV, total_loss
from .pipeline import init_weights, run_dense_reference, run_direct, run_topdown_sim
from .scene import Scene, generate_scene, load_scene, save_scene
from .sparse import SparseTensor, ian_forward, ssc_forward, suppress_background, to_dense, to_sparse
from .temporal import SmoothingConfig, backward_warp, isi, itf, psnr, ssim, temporal_smooth
from .tensor import aggregate_pyramid, bilinear_resize, binarize

__version__ = "0.1.0"
