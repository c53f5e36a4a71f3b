"""Hot-kernel selection: compiled candidate evaluator with numpy fallback.

``eval_candidates(idx, h, X, Xt, Yh, Rx, Sxx, mu, lam_nm, const_term,
beta_only_loss)`` returns the unpenalized profile loss of each candidate
change plane.  Both implementations exploit the same structure: in the
eigenbasis that simultaneously diagonalizes the penalty and the across-grid
quadratic form, the profiled normal equations decouple into one
``(p + d) x (p + d)`` system per basis direction

    (mu_m * S_w + lambda * n * M * I) u_m = R_m,

where ``S_w`` is the Gram matrix of the working design ``(X, Xt * G_h)``.
At the solution the loss collapses to inner products of ``u`` with the
right-hand side, so the evaluator never materializes fitted values.

Candidates whose smoothed weights are numerically constant (sample standard
deviation below 1e-12) leave the subgroup effect unidentified and are
assigned ``beta_only_loss``.

Set ``FUNCPLANE_NO_FAST=1`` to force the numpy path.
"""

import os

from . import _profile_ref

if os.environ.get("FUNCPLANE_NO_FAST"):
    _impl = _profile_ref
    HAVE_COMPILED = False
else:
    try:
        from . import _profile_fast as _impl

        HAVE_COMPILED = True
    except ImportError:
        _impl = _profile_ref
        HAVE_COMPILED = False

eval_candidates = _impl.eval_candidates
reference_eval_candidates = _profile_ref.eval_candidates
