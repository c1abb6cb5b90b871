"""Collage: pack closed vector shapes into a container by gradient descent
on image-space losses from a differentiable soft rasterizer."""

from .errors import (CheckpointError, CollageError, DegenerateShape,
                     EmptyContainer, KernelTooLarge, NonConvergence,
                     NonFiniteGradient, ParseError, PlacementOverflow,
                     ResolutionMismatch, ValidationError)
from .vecgeom import (BezierShape, ElementTransform, Polyline, apply_transform,
                      flatten, signed_distance, signed_distance_jacobian)
from .render import (CANVAS_UNITS, CoverageBuffer, GradientSet, HardMasks,
                     PixelGrad, RenderConfig, backward, composite_color,
                     prepare_sampling, rasterize, rasterize_hard)
from .losses import (ContainerField, ContainerSource, ForceSpec, LossWeights,
                     TotalLoss, UniformConfig, containment_loss, force_loss,
                     overlap_loss, total_loss, uniform_loss)
from .initialize import Skeleton, extract_skeleton, place_elements, place_random
from .optimize import (FitResult, OptimizerConfig, ResolutionSchedule, RunState,
                       Scene, fit_outline, run, step)
from .metrics import QualityReport, compare, evaluate
from .config import (ElementSpec, FitConfig, JobConfig, OutputSpec, dump_config,
                     load_config)
from .svgio import export_svg, load_shapes
from .cli import run_job

__version__ = "0.1.0"
