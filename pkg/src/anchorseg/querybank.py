"""Ordered language-grounded query banks from a toy recurrent reasoner.

The reasoner consumes pooled image tokens plus a symbolic query and emits
K contextual hidden states followed by one anchor hidden state; causality
is strict (state k never sees parameters of later steps). A shared
two-layer MLP projects hidden states -- and image tokens, so similarity is
computed in the same space -- down to the query dimension.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import tensor as T
from .errors import ContractError
from .optim import Parameter


@dataclass
class QueryBank:
    contextual: list[T.Tensor]  # q_1..q_K, order significant
    anchor: T.Tensor            # always last

    @property
    def K(self) -> int:
        return len(self.contextual)


@dataclass
class PositionalTable:
    rows: Parameter  # [K+1, d], zero-init so the augmented decoder starts unchanged

    @property
    def length(self) -> int:
        return self.rows.data.shape[0]

    @classmethod
    def zeros(cls, n_bank: int, d: int, dtype=np.float32) -> "PositionalTable":
        return cls(rows=Parameter(np.zeros((n_bank, d)), "positional", dtype=dtype))


@dataclass
class ToyReasonerParams:
    embed: Parameter                      # [vocab, d_lm]
    init_w: Parameter                     # [d_lm, d_lm] bootstrap from symbols
    init_b: Parameter
    step_ws: list[Parameter] = field(default_factory=list)  # K x [2*d_lm, d_lm]
    step_bs: list[Parameter] = field(default_factory=list)
    anchor_w: Parameter = None            # [2*d_lm, d_lm]
    anchor_b: Parameter = None
    phi_w1: Parameter = None              # [d_lm, d_lm]
    phi_b1: Parameter = None
    phi_w2: Parameter = None              # [d_lm, d]
    phi_b2: Parameter = None

    @property
    def K(self) -> int:
        return len(self.step_ws)


PHI_HIDDEN_MULT = 1  # hidden width multiplier of the shared projection MLP


def init_reasoner(rng: np.random.Generator, vocab: int, d_lm: int, d: int,
                  k_steps: int, dtype=np.float32) -> ToyReasonerParams:
    def mat(shape, fan_in):
        return rng.normal(0.0, 1.0 / np.sqrt(fan_in), size=shape)

    dh = PHI_HIDDEN_MULT * d_lm
    p = ToyReasonerParams(
        embed=Parameter(rng.normal(0.0, 1.0, size=(vocab, d_lm)), "reasoner.embed", dtype),
        init_w=Parameter(mat((d_lm, d_lm), d_lm), "reasoner.init_w", dtype),
        init_b=Parameter(np.zeros(d_lm), "reasoner.init_b", dtype),
        anchor_w=Parameter(mat((2 * d_lm, d_lm), 2 * d_lm), "reasoner.anchor_w", dtype),
        anchor_b=Parameter(np.zeros(d_lm), "reasoner.anchor_b", dtype),
        phi_w1=Parameter(mat((d_lm, dh), d_lm), "reasoner.phi_w1", dtype),
        phi_b1=Parameter(np.zeros(dh), "reasoner.phi_b1", dtype),
        phi_w2=Parameter(mat((dh, d), dh), "reasoner.phi_w2", dtype),
        phi_b2=Parameter(np.zeros(d), "reasoner.phi_b2", dtype),
    )
    for k in range(k_steps):
        p.step_ws.append(Parameter(mat((2 * d_lm, d_lm), 2 * d_lm),
                                   f"reasoner.step{k}_w", dtype))
        p.step_bs.append(Parameter(np.zeros(d_lm), f"reasoner.step{k}_b", dtype))
    return p


def _affine_vec(v: T.Tensor, w: Parameter, b: Parameter) -> T.Tensor:
    row = T.reshape(v, (1, v.shape[0]))
    return T.reshape(T.add_row_bias(T.matmul(row, w.tensor), b.tensor), (-1,))


def generate_query_bank(image_tokens: T.Tensor, query_symbols: Sequence[int],
                        params: ToyReasonerParams):
    """Run the reasoner; returns (hidden states h_1..h_K, anchor hidden h_anc).

    h_0 bootstraps from the mean symbol embedding; each step sees only its
    predecessor and the pooled image tokens, so h_k depends on steps < k only.
    """
    if len(query_symbols) == 0:
        raise ContractError("query needs at least one symbol")
    pooled = T.mean_rows(image_tokens)
    sym = T.mean_rows(T.gather_rows(params.embed.tensor, list(query_symbols)))
    h = _affine_vec(sym, params.init_w, params.init_b)
    hiddens = []
    for w, b in zip(params.step_ws, params.step_bs):
        h = T.tanh(_affine_vec(T.concat_vec(h, pooled), w, b))
        hiddens.append(h)
    h_anc = _affine_vec(T.concat_vec(h, pooled), params.anchor_w, params.anchor_b)
    return hiddens, h_anc


def project_phi(hidden: T.Tensor, params: ToyReasonerParams) -> T.Tensor:
    """Two affine layers with relu between, d_lm -> d."""
    a = _affine_vec(hidden, params.phi_w1, params.phi_b1)
    return _affine_vec(T.relu(a), params.phi_w2, params.phi_b2)


def project_phi_rows(rows: T.Tensor, params: ToyReasonerParams) -> T.Tensor:
    """phi applied row-wise to an [N, d_lm] matrix (shared weights)."""
    a = T.add_row_bias(T.matmul(rows, params.phi_w1.tensor), params.phi_b1.tensor)
    return T.add_row_bias(T.matmul(T.relu(a), params.phi_w2.tensor), params.phi_b2.tensor)


def make_query_bank(hiddens: Sequence[T.Tensor], h_anc: T.Tensor,
                    params: ToyReasonerParams) -> QueryBank:
    return QueryBank(contextual=[project_phi(h, params) for h in hiddens],
                     anchor=project_phi(h_anc, params))


def add_positional(bank: QueryBank, table: PositionalTable) -> T.Tensor:
    """Stack the bank (anchor last) and add the positional rows -> [K+1, d]."""
    if table.length != bank.K + 1:
        raise ContractError(
            f"positional table has {table.length} rows, bank needs {bank.K + 1}")
    stacked = T.stack_rows(list(bank.contextual) + [bank.anchor])
    return T.add(stacked, table.rows.tensor)


def anchor_only_queries(bank: QueryBank, table: PositionalTable) -> T.Tensor:
    """[1, d] query matrix with only the anchor row (contextual rows dropped)."""
    if table.length != bank.K + 1:
        raise ContractError(
            f"positional table has {table.length} rows, bank needs {bank.K + 1}")
    stacked = T.stack_rows([bank.anchor])
    pos = T.reshape(T.take_row(table.rows.tensor, table.length - 1), (1, -1))
    return T.add(stacked, pos)
