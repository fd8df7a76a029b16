# Numerical core module
