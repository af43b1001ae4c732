# From-scratch MLP / CNN classifiers
