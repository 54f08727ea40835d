from .autograd import (BackwardError, NonFiniteError, ShapeError, Tensor, no_grad, set_tripwire, tensor)
from .layers import (BatchNorm2d, Conv2d, ConvTranspose2d, InstanceNorm2d, LayerSpec, LeakyReLU, Module,
                     ReLU, ResidualBlock, Sequential, Tanh, build_layer, init_weights)
from .optim import Adam, linear_decay_lr
from .gradcheck import GradCheckReport, grad_check
