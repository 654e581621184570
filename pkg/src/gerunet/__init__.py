"""D4 group-equivariant segmentation networks on a small numpy autodiff engine."""
from .group import (ELEMENTS, IDENTITY, GroupElement, act_coord, compose, inverse, left_perm,
                    make_element, shift_plane, transform_group_feature, transform_plane)
from .layers import (group_batchnorm, group_conv, group_skip, group_upsample, lift_conv,
                     orientation_pool)
from .models import (ModelConfig, build_ger_unet, build_regular_runet, count_parameters,
                     scale_width)
from .tensor import Tape, Tensor, backward, finite_diff_grad

__version__ = "0.1.0"
