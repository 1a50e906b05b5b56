"""Simulation and verification toolkit for Erlang-Sevastyanov queues with hazard-defined service.

Modules
-------
service_dist   hazard models: H, S, mean, sampling, floor check
arrivals       state-dependent arrival intensities lambda_n and Lambda
engine         exact event-driven simulation of the elapsed-time process
stationary     closed-form stationary law and insensitivity
lyapunov       generator terms, drift checks, moment envelope, Dynkin residuals
certificate    admissible (m, a, k, ell, eps, R) search and re-validation
coupling       two-copy coupling, meeting parameters, hitting moments
estimators     CIs, count TV, tail fits, regenerative means
cli            config-driven experiment runner
"""

from .arrivals import ArrivalModel, lambda_bar
from .certificate import Certificate, InfeasibleCertificate, check_am, check_base, search_certificate
from .engine import EMPTY, EventLog, Models, SystemState, hitting_time_empty, simulate
from .estimators import EstimateCI, TailCurve, fit_polynomial_tail, marginal_counts_at, regenerative_mean, tv_counts
from .lyapunov import LyapunovParams, drift_inequality_check, generator_terms
from .service_dist import HazardModel, cumulative_hazard, mean_service, sample_service, survival
from .stationary import count_pmf, sample_stationary, stationary_density_at

__version__ = "0.1.0"
