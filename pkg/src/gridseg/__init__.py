"""Exact trilevel solver for segmenting a power grid communication network.

An IT administrator partitions the grid's communication forest into
security enclaves, a budget-limited attacker pivots down the forest to
trip protection relays, and the grid operator redispatches with a DC
optimal power flow to minimise load shed.  The library solves all three
levels exactly at study scale and ships the 9-bus and 30-bus instances
used by the regression suite.
"""

__version__ = "0.1.0"
