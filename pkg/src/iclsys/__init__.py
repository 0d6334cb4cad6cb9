"""In-context learning of linear systems with single-layer linear transformers.

Library layout:
  numerics     seeded sampling, SPD matrices, linear-algebra helpers
  tasks        task/covariate distributions, prompts, embeddings
  transformer  reduced and full linear-attention forward passes
  risk         empirical / Monte-Carlo / closed-form / limiting risks
  training     projected gradient descent on the empirical risk
  diversity    centralizers, minimizer sets, diversity verdicts
  pde          sine-basis Galerkin pipeline for 1-D elliptic operators
  harness      experiment sweeps, slope fits, CSV/SVG reporting
  verification oracle suite behind `icl verify`
"""

from .numerics import Rng, SpdMatrix, identity_spd
from .tasks import (AtomicTasks, ConstantMultipleTasks, CovariateDistribution,
                    Prompt, PromptSet, RotatedDiagonalTasks, embed,
                    equal_correlated_cov, sample_prompt, sample_prompt_set,
                    sample_task)
from .transformer import FullTheta, Theta, forward_full, predict, project_to_budget
from .risk import (RiskContext, RiskReport, TruncationEvent, empirical_risk,
                   expected_cov_product, limiting_risk, monte_carlo_risk,
                   optimal_Q, population_risk_closed_form, risk_gradient,
                   trace_sigma, truncated_monte_carlo_risk)
from .training import GaussianInit, NearInit, TrainConfig, train
from .diversity import (centralizer, distance_surrogate, diversity_verdict,
                        is_limiting_minimizer, sample_generators,
                        simultaneously_diagonalizable)
from .pde import (GrfSpec, SineBasis, assemble_stiffness, decode, encode,
                  h1_norm_sq, pde_task_distribution, reference_solution,
                  sample_grf)
from .harness import fit_slope, run_experiment, shifted_relative_error

__version__ = "0.1.0"
