"""Mean-field Bose gas laboratory: exact diagonalization on a truncated momentum
lattice, Bogoliubov theory and large deviations of one-body observables."""

__version__ = "0.1.0"
