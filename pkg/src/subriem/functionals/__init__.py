"""Functional-inequality estimators over finite function corpora."""
from .corpus import (FunctionCorpus, bounded_corpus, bump_corpus, constants_corpus, dilate_corpus,
                     dilate_field, resolve_corpus, scale_corpus, standard_corpus)
from .inequalities import (theta_bound, verify_cheeger, verify_exp_integrability, verify_ifi2,
                           verify_l1phi_entropy, verify_lsq, verify_tight_ledoux, verify_ubound)
from .phi import PhiSpec, entropy_phi, phi_eval, theta_constant
from .profile import ProfileTable, check_q_equivalence, profile_dominance, profile_Uq, profile_value
from .sobolev import critical_epsilon, verify_poincare_ball, verify_sobolev_baseline

__all__ = [
    "FunctionCorpus", "bounded_corpus", "bump_corpus", "constants_corpus", "dilate_corpus", "dilate_field",
    "resolve_corpus", "scale_corpus", "standard_corpus", "theta_bound", "verify_cheeger",
    "verify_exp_integrability", "verify_ifi2", "verify_l1phi_entropy", "verify_lsq", "verify_tight_ledoux",
    "verify_ubound", "PhiSpec", "entropy_phi", "phi_eval", "theta_constant", "ProfileTable",
    "check_q_equivalence", "profile_dominance", "profile_Uq", "profile_value", "critical_epsilon",
    "verify_poincare_ball", "verify_sobolev_baseline",
]
