"""Music-conditioned dance generation with a clean-sample diffusion model:
pose kinematics, DDPM machinery, a transformer denoiser, baseline audio
features, and the evaluation metric suite."""

__version__ = "0.1.0"

from .diffusion import (
    EditConstraint,
    NoiseSchedule,
    SamplerConfig,
    cosine_schedule,
    forward_diffuse,
    guided_prediction,
    long_form_sample,
    reverse_step,
    sample,
)
from .kinematics import extract_contact_labels, finite_difference, forward_kinematics
from .motion_io import ConditioningSequence, MotionClip
from .rotations import matrix_to_rot6d, rot6d_to_matrix
from .skeleton import Skeleton, chain_skeleton, default_skeleton
