"""Score-based diffusion and flow matching on Lie group representation spaces."""

from .batch import SampleBatch, load_csv, save_csv
from .errors import (
    DegenerateAngle,
    DegenerateBond,
    DegenerateTime,
    GimbalDegeneracy,
    InvalidParams,
    LieDiffuseError,
    NonFiniteLoss,
    NonFiniteState,
    SchemaError,
    SingularPoint,
    SizeMismatch,
    TooLarge,
)
from .groups import (
    FlowCoords,
    GroupAction,
    from_flow_coords,
    make_group,
    to_flow_coords,
)
from .model import ScoreNetwork, TrainConfig, TrainReport, net_forward
from .schedule import BridgeSchedule, NoiseSchedule, make_bridge_schedule, make_schedule, ou_solution
from .sde import (
    ForwardDraw,
    Trajectory,
    bridge_forward,
    bridge_sample,
    conditional_score,
    euler_maruyama_forward,
    forward_sample,
    reverse_step,
    sample,
)
from .training import cfm_target, ode_sample, train_bridge_score, train_cfm, train_score

__version__ = "0.1.0"
