"""Time-dependent generators ``L(t) = sum_k f_k(t) G_k`` and preset models."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Sequence

import jsonschema
import numpy as np

from .operators import SIGMA_MINUS, SIGMA_Z, is_hermitian, kron, sandwich
from .rates import ConstantRate, RateFunction, as_rate, combine, rate_from_dict
from .serialization import matrix_from_json, matrix_to_json

MAX_QUBITS = 4


class ModelError(ValueError):
    """Invalid model description (schema, dimensions, Hermiticity)."""


class NonCommutingError(ValueError):
    """Raised where a commuting generator family is required."""


def hamiltonian_piece(h: np.ndarray, tol: float = 1e-10) -> np.ndarray:
    """Superoperator of ``X -> -i[H, X]``."""
    h = np.asarray(h, dtype=complex)
    if not is_hermitian(h, tol):
        raise ModelError("Hamiltonian is not Hermitian")
    eye = np.eye(h.shape[0])
    return -1j * (np.kron(eye, h) - np.kron(h.T, eye))


def dissipator_piece(a: np.ndarray) -> np.ndarray:
    """Unit-rate dissipator ``X -> A X A^dag - 1/2 {A^dag A, X}``."""
    a = np.asarray(a, dtype=complex)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ModelError(f"jump operator must be square, got shape {a.shape}")
    ada = a.conj().T @ a
    eye = np.eye(a.shape[0])
    return sandwich(a, a.conj().T) - 0.5 * np.kron(eye, ada) - 0.5 * np.kron(ada.T, eye)


def _frozen(x: np.ndarray) -> np.ndarray:
    x = np.array(x, dtype=complex)
    x.setflags(write=False)
    return x


@dataclass(frozen=True)
class GeneratorTerm:
    """One summand ``f(t) G`` together with the operator it was built from."""

    rate: RateFunction
    kind: str  # "hamiltonian" or "dissipator"
    operator: np.ndarray
    piece: np.ndarray = field(repr=False)

    @classmethod
    def dissipator(cls, jump: np.ndarray, rate=1.0) -> "GeneratorTerm":
        return cls(as_rate(rate), "dissipator", _frozen(jump), _frozen(dissipator_piece(jump)))

    @classmethod
    def hamiltonian(cls, h: np.ndarray, rate=1.0) -> "GeneratorTerm":
        return cls(as_rate(rate), "hamiltonian", _frozen(h), _frozen(hamiltonian_piece(h)))


@dataclass(frozen=True)
class GeneratorModel:
    dimension: int
    terms: tuple[GeneratorTerm, ...] = ()
    name: str = ""
    description: str = ""

    def __post_init__(self):
        object.__setattr__(self, "terms", tuple(self.terms))
        for k, term in enumerate(self.terms):
            if term.operator.shape != (self.dimension, self.dimension):
                raise ModelError(f"term {k}: operator shape {term.operator.shape} does not match "
                                 f"dimension {self.dimension}")

    def generator_at(self, t: float) -> np.ndarray:
        """``L(t) = sum_k f_k(t) G_k``."""
        out = np.zeros((self.dimension ** 2,) * 2, dtype=complex)
        for term in self.terms:
            if not term.rate.is_zero:
                out += term.rate(t) * term.piece
        return out

    def active_terms(self) -> list[GeneratorTerm]:
        return [term for term in self.terms if not term.rate.is_zero]

    def rate_groups(self) -> list[tuple[RateFunction, np.ndarray]]:
        """Collapse terms sharing a rate shape into single pieces.

        Constant-rate terms merge into one piece with unit rate, and terms
        with identical rate descriptors merge by adding their pieces. The
        result has pairwise linearly distinct rates as far as can be decided
        from the descriptors.
        """
        groups: dict[str, list] = {}
        for term in self.active_terms():
            rate, coeff = term.rate, 1.0
            if isinstance(rate, ConstantRate):
                rate, coeff = ConstantRate(1.0), rate.value
            key = rate.key()
            if key not in groups:
                groups[key] = [rate, np.zeros_like(term.piece)]
            groups[key][1] = groups[key][1] + coeff * term.piece
        return [(rate, piece) for rate, piece in groups.values() if np.any(piece != 0)]


def _commutator_norm(a: np.ndarray, b: np.ndarray) -> float:
    return float(np.linalg.norm(a @ b - b @ a))


@dataclass(frozen=True)
class CommutativityReport:
    commuting: bool
    max_pair_residual: float
    sampled_residual: float
    n_groups: int
    tol: float
    pair_residuals: tuple[tuple[int, int, float], ...] = ()

    def __bool__(self) -> bool:
        return self.commuting

    def to_dict(self) -> dict:
        return {"commuting": self.commuting, "max_pair_residual": self.max_pair_residual,
                "sampled_residual": self.sampled_residual, "n_rate_groups": self.n_groups,
                "tol": self.tol,
                "pairs": [{"i": i, "j": j, "residual": r} for i, j, r in self.pair_residuals]}


def check_commutativity(model: GeneratorModel, tol: float = 1e-10, n_samples: int = 10,
                        horizon: float = 10.0, seed: int = 0) -> CommutativityReport:
    """Test whether ``[L(t), L(t')] = 0`` for all times.

    The verdict is the pairwise test on rate groups,
    ``||[G_j, G_k]|| <= tol ||G_j|| ||G_k||``, which is sufficient. The
    sampled residual ``max ||[L(t_i), L(t_j)]|| / (||L(t_i)|| ||L(t_j)||)``
    over random time pairs is only a necessary check and is reported
    alongside.
    """
    groups = model.rate_groups()
    pairs = []
    worst = 0.0
    for i in range(len(groups)):
        for j in range(i + 1, len(groups)):
            gi, gj = groups[i][1], groups[j][1]
            scale = np.linalg.norm(gi) * np.linalg.norm(gj)
            r = _commutator_norm(gi, gj) / scale if scale > 0 else 0.0
            pairs.append((i, j, r))
            worst = max(worst, r)
    rng = np.random.default_rng(seed)
    sampled = 0.0
    for _ in range(n_samples):
        t1, t2 = rng.uniform(0.0, horizon, size=2)
        l1, l2 = model.generator_at(t1), model.generator_at(t2)
        scale = np.linalg.norm(l1) * np.linalg.norm(l2)
        if scale > 0:
            sampled = max(sampled, _commutator_norm(l1, l2) / scale)
    return CommutativityReport(worst <= tol, worst, sampled, len(groups), tol, tuple(pairs))


def require_commuting(model: GeneratorModel, tol: float = 1e-10) -> None:
    report = check_commutativity(model, tol=tol, n_samples=0)
    if not report.commuting:
        raise NonCommutingError(
            f"generator pieces of model {model.name!r} do not commute "
            f"(max normalized commutator {report.max_pair_residual:.3g})")


# --------------------------------------------------------------------------
# Presets
# --------------------------------------------------------------------------

def _model(dimension, terms, name, description="") -> GeneratorModel:
    return GeneratorModel(dimension, tuple(t for t in terms if not t.rate.is_zero), name, description)


def preset_amplitude_damping(rate=1.0) -> GeneratorModel:
    """Spontaneous decay of a two-level system, jump ``sigma_minus``."""
    return _model(2, [GeneratorTerm.dissipator(SIGMA_MINUS, rate)], "amplitude-damping",
                  "qubit decay |1> -> |0>")


def qubit_operator(op: np.ndarray, k: int, n: int) -> np.ndarray:
    """Embed a single-qubit operator on qubit ``k`` of ``n`` (qubit 0 leftmost)."""
    eye = np.eye(2, dtype=complex)
    return kron(*[op if j == k else eye for j in range(n)])


def preset_pure_dephasing(n_qubits: int = 1, rates: Sequence | RateFunction | float = 1.0) -> GeneratorModel:
    """Independent dephasing, jump ``sigma_z`` on every qubit."""
    if not 1 <= n_qubits <= MAX_QUBITS:
        raise ModelError(f"pure dephasing supports 1..{MAX_QUBITS} qubits, got {n_qubits}")
    if isinstance(rates, (list, tuple)):
        if len(rates) != n_qubits:
            raise ModelError(f"expected {n_qubits} rates, got {len(rates)}")
        rate_list = [as_rate(r) for r in rates]
    else:
        rate_list = [as_rate(rates)] * n_qubits
    terms = [GeneratorTerm.dissipator(qubit_operator(SIGMA_Z, k, n_qubits), r)
             for k, r in enumerate(rate_list)]
    return _model(2 ** n_qubits, terms, "pure-dephasing", f"{n_qubits}-qubit independent dephasing")


def preset_two_qubit_dephasing(gamma1=1.0, gamma2=0.0) -> GeneratorModel:
    """Two-qubit dephasing with rates ``(g1-g2)/2`` and ``(g1+g2)/2``.

    The first term has jump ``sz_A - sz_B`` and the second ``sz_A + sz_B``.
    Equal rate descriptors leave only the collective second term.
    """
    g1, g2 = as_rate(gamma1), as_rate(gamma2)
    sza = qubit_operator(SIGMA_Z, 0, 2)
    szb = qubit_operator(SIGMA_Z, 1, 2)
    terms = [
        GeneratorTerm.dissipator(sza - szb, combine([0.5, -0.5], [g1, g2])),
        GeneratorTerm.dissipator(sza + szb, combine([0.5, 0.5], [g1, g2])),
    ]
    return _model(4, terms, "two-qubit-dephasing", "two qubits, relative and collective dephasing")


def double_dot_modes(phase: float = 0.0) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Jordan-Wigner modes ``a1, a2`` and ``A = (a1 + e^{i phase} a2)/sqrt(2)``."""
    eye = np.eye(2, dtype=complex)
    a1 = np.kron(SIGMA_MINUS, eye)
    a2 = np.kron(SIGMA_Z, SIGMA_MINUS)
    a = (a1 + np.exp(1j * phase) * a2) / np.sqrt(2)
    return a1, a2, a


def preset_double_dot(phase: float = 0.0, epsilon: float = 1.0, kappa=1.0, kappa_tilde=0.0,
                      include_hamiltonian: bool = False) -> GeneratorModel:
    """Double quantum dot coupled to a reservoir through one effective fermion mode.

    The displayed ``kappa (2 A rho A^dag - {A^dag A, rho})`` form is the
    unit-rate dissipator with rate ``2 kappa``; likewise ``2 kappa_tilde`` on
    the jump ``A^dag``.
    """
    a1, a2, a = double_dot_modes(phase)
    terms = []
    if include_hamiltonian:
        h = epsilon * (a1.conj().T @ a1 + a2.conj().T @ a2)
        terms.append(GeneratorTerm.hamiltonian(h, 1.0))
    terms.append(GeneratorTerm.dissipator(a, combine([2.0], [as_rate(kappa)])))
    terms.append(GeneratorTerm.dissipator(a.conj().T, combine([2.0], [as_rate(kappa_tilde)])))
    return _model(4, terms, "double-dot", f"double quantum dot, phase {phase}")


PRESETS = {
    "amplitude-damping": preset_amplitude_damping,
    "pure-dephasing": preset_pure_dephasing,
    "two-qubit-dephasing": preset_two_qubit_dephasing,
    "double-dot": preset_double_dot,
}


# --------------------------------------------------------------------------
# JSON
# --------------------------------------------------------------------------

_PAIR = {"type": "array", "items": {"type": "number"}, "minItems": 2, "maxItems": 2}
MATRIX_SCHEMA = {
    "type": "array",
    "minItems": 1,
    "items": {"anyOf": [_PAIR, {"type": "array", "minItems": 1, "items": _PAIR}]},
}
RATE_SCHEMA = {
    "type": "object",
    "required": ["kind"],
    "oneOf": [
        {"properties": {"kind": {"const": "constant"}, "value": {"type": "number"}},
         "required": ["value"]},
        {"properties": {"kind": {"const": "expr"}, "expr": {"type": "string"}},
         "required": ["expr"]},
        {"properties": {"kind": {"const": "preset"}, "name": {"type": "string"},
                        "params": {"type": "object"}},
         "required": ["name"]},
    ],
}
MODEL_SCHEMA = {
    "type": "object",
    "required": ["dimension", "terms"],
    "properties": {
        "dimension": {"type": "integer", "minimum": 1},
        "name": {"type": "string"},
        "description": {"type": "string"},
        "hamiltonian": MATRIX_SCHEMA,
        "hamiltonian_rate": RATE_SCHEMA,
        "terms": {
            "type": "array",
            "items": {"type": "object", "required": ["rate", "jump"],
                      "properties": {"rate": RATE_SCHEMA, "jump": MATRIX_SCHEMA}},
        },
    },
}


def _schema_error(doc) -> None:
    validator = jsonschema.Draft202012Validator(MODEL_SCHEMA)
    errors = sorted(validator.iter_errors(doc), key=lambda e: list(e.absolute_path))
    if errors:
        lines = [f"{e.json_path}: {e.message}" for e in errors[:5]]
        raise ModelError("model document violates schema:\n  " + "\n  ".join(lines))


def model_from_dict(doc: dict) -> GeneratorModel:
    _schema_error(doc)
    d = doc["dimension"]
    terms = []
    try:
        if "hamiltonian" in doc:
            h = matrix_from_json(doc["hamiltonian"])
            if h.shape != (d, d):
                raise ModelError(f"$.hamiltonian: shape {h.shape} does not match dimension {d}")
            if not is_hermitian(h):
                raise ModelError("$.hamiltonian: Hamiltonian is not Hermitian")
            rate = rate_from_dict(doc.get("hamiltonian_rate", {"kind": "constant", "value": 1.0}))
            terms.append(GeneratorTerm.hamiltonian(h, rate))
        elif "hamiltonian_rate" in doc:
            raise ModelError("$.hamiltonian_rate given without $.hamiltonian")
        for k, t in enumerate(doc["terms"]):
            jump = matrix_from_json(t["jump"])
            if jump.shape != (d, d):
                raise ModelError(f"$.terms[{k}]: jump shape {jump.shape} does not match "
                                 f"dimension {d}")
            try:
                rate = rate_from_dict(t["rate"])
            except ValueError as exc:
                raise ModelError(f"$.terms[{k}].rate: {exc}") from exc
            terms.append(GeneratorTerm.dissipator(jump, rate))
    except ModelError:
        raise
    except ValueError as exc:
        raise ModelError(str(exc)) from exc
    return GeneratorModel(d, tuple(terms), doc.get("name", ""), doc.get("description", ""))


def model_to_dict(model: GeneratorModel) -> dict:
    doc: dict = {"dimension": model.dimension}
    if model.name:
        doc["name"] = model.name
    if model.description:
        doc["description"] = model.description
    hams = [t for t in model.terms if t.kind == "hamiltonian"]
    if len(hams) > 1:
        raise ModelError("the model file format holds at most one Hamiltonian term")
    if hams:
        doc["hamiltonian"] = matrix_to_json(hams[0].operator)
        doc["hamiltonian_rate"] = hams[0].rate.to_dict()
    doc["terms"] = [{"rate": t.rate.to_dict(), "jump": matrix_to_json(t.operator)}
                    for t in model.terms if t.kind == "dissipator"]
    return doc


def load_model(source) -> GeneratorModel:
    """Load a model from a path, a JSON string or an already-parsed dict."""
    if isinstance(source, dict):
        return model_from_dict(source)
    text = str(source)
    if not text.lstrip().startswith("{"):
        with open(text, encoding="utf-8") as fh:
            text = fh.read()
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ModelError(f"invalid JSON: {exc}") from exc
    return model_from_dict(doc)


def save_model(model: GeneratorModel, path=None) -> str:
    text = json.dumps(model_to_dict(model), indent=2)
    if path is not None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(text + "\n")
    return text


def models_equal(a: GeneratorModel, b: GeneratorModel) -> bool:
    """Semantic identity: same dimension, operators bit-equal, rate descriptors equal."""
    if a.dimension != b.dimension or len(a.terms) != len(b.terms):
        return False
    return all(x.kind == y.kind and x.rate.to_dict() == y.rate.to_dict()
               and np.array_equal(x.operator, y.operator) for x, y in zip(a.terms, b.terms))
