"""AdamW à décroissance de poids découplée, écrit sans torch.optim.AdamW."""

from collections.abc import Callable

import torch


def adamw_step(param: torch.Tensor, grad: torch.Tensor, state: dict, lr: float,
               weight_decay: float, beta1: float = 0.9, beta2: float = 0.999,
               eps: float = 1e-8) -> None:
    """
    Un pas AdamW en place sur `param` :
        θ ← θ − lr·m̂/(√v̂ + ε) − lr·λ·θ
    La décroissance porte sur θ avant le pas. `state` garde t, m et v.
    """
    if param.shape != grad.shape:
        raise ValueError(f"Formes incompatibles : {tuple(param.shape)} vs {tuple(grad.shape)}")
    if not state:
        state['t'] = 0
        state['m'] = torch.zeros_like(param)
        state['v'] = torch.zeros_like(param)

    state['t'] += 1
    t = state['t']
    m, v = state['m'], state['v']
    m.mul_(beta1).add_(grad, alpha=1 - beta1)
    v.mul_(beta2).addcmul_(grad, grad, value=1 - beta2)
    m_hat = m / (1 - beta1 ** t)
    v_hat = v / (1 - beta2 ** t)

    param.mul_(1 - lr * weight_decay)
    param.sub_(lr * m_hat / (v_hat.sqrt() + eps))


class AdamW(torch.optim.Optimizer):
    def __init__(self, params, lr: float = 1e-3, betas: tuple[float, float] = (0.9, 0.999),
                 eps: float = 1e-8, weight_decay: float = 0.0):
        if lr <= 0:
            raise ValueError(f"Taux d'apprentissage invalide : {lr}")
        if not (0.0 <= betas[0] < 1.0 and 0.0 <= betas[1] < 1.0):
            raise ValueError(f"Betas invalides : {betas}")
        defaults = {'lr': lr, 'betas': betas, 'eps': eps, 'weight_decay': weight_decay}
        super().__init__(params, defaults)

    @torch.no_grad()
    def step(self, closure: Callable | None = None):
        loss = None
        if closure is not None:
            with torch.enable_grad():
                loss = closure()
        for group in self.param_groups:
            beta1, beta2 = group['betas']
            for p in group['params']:
                if p.grad is None:
                    continue
                adamw_step(p, p.grad, self.state[p], group['lr'], group['weight_decay'],
                           beta1, beta2, group['eps'])
        return loss
