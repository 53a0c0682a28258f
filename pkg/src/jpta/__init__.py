"""Joint phase-time array beamforming for mixed near- and far-field users."""

from .arrays import (
    AllocationPlan,
    JptaBeamformer,
    PhaseShifterBank,
    TtdBank,
    array_gain,
    user_rates,
    utility,
)
from .baselines import FdBeamformer, PaBeamformer, fd_optimize, pa_optimize
from .harness import GainMapSpec, PowerModel, gain_map, run_batch, sweep
from .kernels import BACKEND
from .optimizer import AoOptions, ScaOptions, alternating_optimize, fit_beamformer
from .scenario import (
    SystemConfig,
    UserPosition,
    load_config,
    rayleigh_distance,
    sample_users,
    synthesize_channels,
)

__version__ = "0.1.0"
