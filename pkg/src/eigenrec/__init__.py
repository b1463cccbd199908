"""eigenrec: reconstruct Hamiltonian coefficients from eigenstate
expectation values via shallow neural regression, sign-pattern routing,
and BFGS refinement."""

__version__ = "0.1.0"
