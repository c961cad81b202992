import math

import torch
import torch.nn.init as init

from hyperrec.geometry import Activation, HypLinearParams, hyp_linear


class HypLinear(torch.nn.Module):
    """
        Hyperbolic linear layer with tangent-space weight and bias.
    """
    def __init__(self, in_features, out_features, c=1.0, activation=Activation.IDENTITY, use_bias=True):
        super().__init__()
        self.in_features = in_features
        self.out_features = out_features
        self.c = c
        self.activation = Activation(activation)
        self.use_bias = use_bias
        self.weight = torch.nn.Parameter(torch.empty(out_features, in_features, dtype=torch.float64))
        self.bias = torch.nn.Parameter(torch.zeros(out_features, dtype=torch.float64), requires_grad=use_bias)
        self.reset_parameters()

    @torch.no_grad()
    def reset_parameters(self):
        init.xavier_uniform_(self.weight, gain=math.sqrt(2))
        init.constant_(self.bias, 0.0)

    def params(self) -> HypLinearParams:
        return HypLinearParams(weight=self.weight, bias=self.bias, activation=self.activation)

    def forward(self, x):
        return hyp_linear(self.params(), x, self.c)

    def extra_repr(self):
        return 'in_features={}, out_features={}, c={}, activation={}'.format(
            self.in_features, self.out_features, self.c, self.activation.value
        )
