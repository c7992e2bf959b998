from .tensor import Tape, Tensor, backward, concat, no_grad, parameter, scatter_rows, tensor
