"""Neural-guided symbolic regression with risk-seeking policy gradients."""
