"""pacmerge: PAC-Bayes generalisation certificates for merged models.

The library learns low-dimensional merge coefficients over a pool of source
models and emits rigorous generalisation certificates for the merged model.
See the README for a tour; the ``demos/`` scripts exercise each capability.
"""

from .bounds import (
    BoundBudget,
    BoundReport,
    CertificateRecord,
    bernoulli_kl,
    categorical_kl,
    conventional_bound,
    gaussian_kl,
    invert_kl,
    seeger_certificate,
    test_set_bound,
)
from .certify import (
    CertifyConfig,
    DdpConfig,
    Objective,
    certify,
    certify_ddp,
    certify_discrete,
    optimize,
)
from .cma import CmaConfig, CmaEs, default_popsize, minimize
from .errors import (
    ConfigError,
    DomainError,
    FormatError,
    OptError,
    StructureError,
    TrainingDiverged,
)
from .merging import (
    MergeScheme,
    TiesPreprocessed,
    default_phi,
    make_scheme,
    realize,
    ties_preprocess,
)
from .params import (
    ModelPool,
    ParamVector,
    TaskVector,
    axpy,
    layer_axpy,
    pool_load,
    pool_save,
)
from .posterior import CategoricalSpec, GaussianSpec, PointSpec, mc_risk, sample
from .toyzoo import (
    LabeledSet,
    MlpSpec,
    SyntheticTask,
    TrainConfig,
    forward,
    gen_tasks,
    init_params,
    loss_and_grad,
    predict,
    sample_set,
    train,
    zero_one_risk,
)

__version__ = "0.1.0"
