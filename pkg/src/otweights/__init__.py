"""Context-aware token weights for preference-pair data.

Weights come from the marginals of an unbalanced entropic optimal
transport plan between the two responses' token hidden states; the
package also ships every closed-form baseline weighting scheme, the
weighted preference losses with analytic gradients, a desk-scale
training lab, and a CLI around machine-readable exports.
"""

__version__ = "0.1.0"

from .core import (
    PreferencePair,
    SchemaError,
    TokenSeq,
    load_pairs,
    log_ratios,
    pair_to_record,
    write_hidden_sidecar,
    write_pairs,
)
from .lab import (
    LengthFit,
    SynthConfig,
    ToyPolicy,
    TrainReport,
    corpus_loss_grad,
    generate,
    length_diagnostics,
    ols_fit,
    reference_policy,
    train,
)
from .loss import (
    BatchSummary,
    LossConfig,
    LossReport,
    batch_loss,
    grad_norm,
    pair_loss,
    report_to_record,
    sigmoid,
    softplus,
    weighted_delta_r,
)
from .ot import (
    NumericalError,
    TransportPlan,
    UotConfig,
    cost_matrix,
    generalized_kl,
    plan_to_json,
    solve_uot,
    uniform_unit_plan,
    uot_objective,
    uot_oracle,
)
from .weighting import (
    Dpo,
    LdDpo,
    Otpo,
    SamPo,
    SimPo,
    Similarity,
    TauMode,
    TokenWeights,
    UniformMin,
    WeightScheme,
    normalize,
    weights,
    weights_to_record,
)
