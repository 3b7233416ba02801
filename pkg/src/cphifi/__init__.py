"""Fast subproblem solvers for hybrid infinite/finite (CP-HIFI) CP decomposition."""
from .aligned import (AlignedSubproblem, aligned_matvec, solve_aligned_decoupled,
                      solve_aligned_direct, solve_aligned_pcg)
from .als import (METHODS, CpHifiConfig, FitTrace, cp_hifi, objective,
                  relative_error)
from .kernels import RkhsMode, gaussian_kernel, sym_eig
from .linear_solvers import (LinearOperator, PcgConfig, SolveReport, SolverError,
                             cholesky_solve, lu_solve, pcg)
from .sampled import ObservationSet, omega_norm, sample_uniform
from .tensor_core import (DenseTensor, KruskalModel, fold, gram_khatri_rao,
                          hadamard, khatri_rao, kronecker, kruskal_full, mttkrp,
                          unfold)
from .unaligned import (UnalignedSubproblem, build_preconditioner,
                        solve_unaligned_direct_nonsym, solve_unaligned_pcg,
                        unaligned_matvec)

__version__ = "0.1.0"
