"""Offline VRP with online bookings: tight-window selection via a learned
value function, supported by an interruptible annealing solver."""

__version__ = "0.1.0"
