"""Toolkit for differential equations with piecewise constant argument of generalized type."""
