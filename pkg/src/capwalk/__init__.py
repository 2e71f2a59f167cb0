"""Capacity of the range of simple random walk on Z^4 and Z^5.

Modules:

* :mod:`capwalk.lattice`: lattice points, counter-based random streams, walks
* :mod:`capwalk.green`: lattice Green's function tables
* :mod:`capwalk.capacity`: Monte Carlo escape probabilities and capacities
* :mod:`capwalk.cross_term`: cross terms, capacity deficits and error bounds
* :mod:`capwalk.graph_calculus`: reduction graphs and replayable certificates
* :mod:`capwalk.exact_oracle`: exact walk distributions and rule constants
* :mod:`capwalk.deviation_lab`: scaling and deviation experiments
* :mod:`capwalk.cli`: command-line entry point
"""

__version__ = "0.1.0"
