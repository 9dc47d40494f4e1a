"""Design-by-contract execution layer for generative components."""

from .contract import (
    GRACEFUL_RAW,
    STRICT,
    Act,
    Agent,
    Contract,
    ContractError,
    ContractOutcome,
    ExecutionTrace,
    FallbackMode,
    Hyperparameters,
    Predicate,
    agent_for,
    apply_act,
    check_postconditions,
    check_preconditions,
    execute,
    finalize,
    graceful_default,
)
from .generators import (
    BernoulliGenerator,
    FamilySpec,
    GeneratorConfig,
    GeneratorRequest,
    GeneratorResponse,
    HttpGenerator,
    ScriptedGenerator,
    ScriptEntry,
    TransportError,
    build_generator,
    replay_script,
)
from .metrics import (
    EquivalenceVerdict,
    RunRecord,
    SuccessReport,
    compare_agents,
    estimate_success,
    factorize_families,
)
from .remediation import (
    ErrorHistory,
    ErrorRecord,
    RemediationExhausted,
    RetryPolicy,
    build_corrective_prompt,
    fix_instance,
    next_delay,
)
from .typed_model import (
    Constraint,
    FieldSpec,
    Instance,
    ParseError,
    TypeSchema,
    Violation,
    check_schema,
    parse_output,
    render_schema_prompt,
    serialize_instance,
    validate_instance,
)

__version__ = "0.1.0"
