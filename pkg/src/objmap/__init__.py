"""Object-level open-vocabulary mapping from posed RGB-D frames."""
