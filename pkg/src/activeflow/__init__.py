"""Active flow matching for black-box sequence optimisation."""
