"""Test package for the counterfactual attribution toolkit."""
