"""Exception hierarchy. Every error carries a machine-readable ``code`` and optional witness."""


class ConfdimError(Exception):
    code = "error"

    def __init__(self, message, witness=None):
        super().__init__(message)
        self.witness = witness

    def to_dict(self):
        return {"error": self.code, "message": str(self), "witness": self.witness}


def _make(name, code, base=ConfdimError):
    return type(name, (base,), {"code": code})


InvalidParameter = _make("InvalidParameter", "invalid_parameter")

# metric core
AsymmetricMatrix = _make("AsymmetricMatrix", "asymmetric_matrix")
NegativeDistance = _make("NegativeDistance", "negative_distance")
TriangleViolation = _make("TriangleViolation", "triangle_violation")
InvalidMass = _make("InvalidMass", "invalid_mass")
AnchorInsideBall = _make("AnchorInsideBall", "anchor_inside_ball")
DiamNotNormalized = _make("DiamNotNormalized", "diam_not_normalized")

# samplers
BackendTooLarge = _make("BackendTooLarge", "backend_too_large")

# csbp
NonpositiveLambda = _make("NonpositiveLambda", "nonpositive_lambda", InvalidParameter)
NonpositiveInput = _make("NonpositiveInput", "nonpositive_input", InvalidParameter)
ParameterOutOfRange = _make("ParameterOutOfRange", "parameter_out_of_range", InvalidParameter)
RejectionBudgetExceeded = _make("RejectionBudgetExceeded", "rejection_budget_exceeded")
NotDecreasing = _make("NotDecreasing", "not_decreasing", InvalidParameter)

# planar
SolverDiverged = _make("SolverDiverged", "solver_diverged")
DegenerateFace = _make("DegenerateFace", "degenerate_face")
EmptySet = _make("EmptySet", "empty_set")
NotDoublyConnected = _make("NotDoublyConnected", "not_doubly_connected")
NegativeModulus = _make("NegativeModulus", "negative_modulus", InvalidParameter)
BadRadii = _make("BadRadii", "bad_radii", InvalidParameter)
InsufficientSamples = _make("InsufficientSamples", "insufficient_samples")

# filling / weights
EmptyLevel = _make("EmptyLevel", "empty_level")
MissingEmbedding = _make("MissingEmbedding", "missing_embedding")
ZeroInradius = _make("ZeroInradius", "zero_inradius")
ScaleTooCoarse = _make("ScaleTooCoarse", "scale_too_coarse")
ZeroMargin = _make("ZeroMargin", "zero_margin")
AxiomViolation = _make("AxiomViolation", "axiom_violation")
H1Violation = _make("H1Violation", "h1_violation", AxiomViolation)
H2Violation = _make("H2Violation", "h2_violation", AxiomViolation)
IdenticalPoints = _make("IdenticalPoints", "identical_points")
BadEpsilon = _make("BadEpsilon", "bad_epsilon", InvalidParameter)

# dimension
DegenerateRange = _make("DegenerateRange", "degenerate_range")
MissingMass = _make("MissingMass", "missing_mass")
TooFewLevels = _make("TooFewLevels", "too_few_levels")
PoorFit = _make("PoorFit", "poor_fit")
