"""Adam 옵티마이저 (상수 학습률)"""

from typing import Dict, List

import numpy as np

from .errors import InvalidDataError
from .tensor import Tensor


class Adam:
    """
    Adam 옵티마이저

    moment 버퍼는 파라미터와 같은 dtype으로 유지하므로 체크포인트로 저장/복원하면
    재개한 학습이 끊기지 않은 학습과 비트 단위로 같다.
    """

    def __init__(
        self,
        params: Dict[str, Tensor],
        lr: float = 1e-4,
        betas=(0.9, 0.999),
        eps: float = 1e-8,
    ):
        self.params = params
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.step_count = 0
        self.m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in params.items()}

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def step(self) -> None:
        self.step_count += 1
        if self.lr == 0.0:
            return
        bias1 = 1.0 - self.beta1**self.step_count
        bias2 = 1.0 - self.beta2**self.step_count
        for name, p in self.params.items():
            if p.grad is None:
                continue
            g = p.grad.astype(p.data.dtype, copy=False)
            dtype = p.data.dtype.type
            self.m[name] = dtype(self.beta1) * self.m[name] + dtype(1.0 - self.beta1) * g
            self.v[name] = dtype(self.beta2) * self.v[name] + dtype(1.0 - self.beta2) * g * g
            m_hat = self.m[name] / dtype(bias1)
            v_hat = self.v[name] / dtype(bias2)
            p.data = p.data - dtype(self.lr) * m_hat / (np.sqrt(v_hat) + dtype(self.eps))

    def state_dict(self) -> Dict[str, np.ndarray]:
        state = {}
        for name in self.params:
            state[f"adam.m.{name}"] = self.m[name]
            state[f"adam.v.{name}"] = self.v[name]
        return state

    def load_state_dict(self, state: Dict[str, np.ndarray], step_count: int) -> None:
        missing: List[str] = []
        for name, p in self.params.items():
            for kind, store in (("m", self.m), ("v", self.v)):
                key = f"adam.{kind}.{name}"
                if key not in state:
                    missing.append(key)
                    continue
                store[name] = np.asarray(state[key], dtype=p.data.dtype).reshape(p.shape).copy()
        if missing:
            raise InvalidDataError(f"옵티마이저 상태 누락: {missing[:3]}")
        self.step_count = int(step_count)
