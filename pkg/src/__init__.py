# Counterfactual Attribution Toolkit
