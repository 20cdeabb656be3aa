"""hopcep: channel estimation and prediction for massive MIMO systems sounded
by frequency-hopped reference signals.

Subpackages follow the processing chain: :mod:`hopcep.config` /
:mod:`hopcep.steering` define the geometry, :mod:`hopcep.channel` synthesizes
multipath observations, :mod:`hopcep.dictionary` builds the off-grid
delay-angle-Doppler transforms, :mod:`hopcep.hmp` and :mod:`hopcep.baselines`
estimate the sparse channel, :mod:`hopcep.hyper` learns the hyper-parameters,
:mod:`hopcep.predict` extrapolates, and :mod:`hopcep.experiment` runs seeded
Monte-Carlo sweeps.
"""

__version__ = "0.1.0"

from .config import (GridSpec, OffGridParams, PathSet, Scenario, SystemConfig,
                     desk_config, paper_config)

__all__ = ["SystemConfig", "GridSpec", "OffGridParams", "PathSet", "Scenario",
           "desk_config", "paper_config", "__version__"]
