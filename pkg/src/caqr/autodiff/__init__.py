from . import special
from .gradcheck import grad_check
from .tape import Tape, Var, backward, ordered_sum

__all__ = ["Tape", "Var", "backward", "grad_check", "ordered_sum", "special"]
