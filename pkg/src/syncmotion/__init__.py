"""Motion features from spatio-temporal synchrony."""
