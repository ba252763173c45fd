# Residual-learning control lab package
