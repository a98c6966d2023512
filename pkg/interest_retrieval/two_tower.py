# =============================================================================
# MODÈLE DEUX TOURS AVEC FUSION DES INTÉRÊTS
# =============================================================================
# e_u = h_user(W2 · (W1·η ⊕ x_u))   (fusion concat)
# e_u = h_user(x_u)                 (none : modèle Vanilla)
# e_i = h_item(x_i)
# En mode attention, le logit ⟨e_u, e_i⟩ est multiplié par α_{u, c(i)}.
# =============================================================================

import logging
from dataclasses import dataclass

import torch
import torch.nn.functional as F
from torch import nn

from .interest import InterestProfile

logger = logging.getLogger(__name__)

FUSION_MODES = ('none', 'concat', 'attention')
SIMILARITIES = ('dot', 'cosine')


@dataclass(frozen=True)
class ModelSpec:
    num_users: int
    num_items: int
    num_clusters: int
    d_in: int = 64
    hidden: tuple[int, ...] = (128, 64)
    d_int: int = 32
    fusion: str = 'concat'
    similarity: str = 'dot'
    dropout: float = 0.1

    def __post_init__(self):
        if self.fusion not in FUSION_MODES:
            raise ValueError(f"Mode de fusion inconnu : {self.fusion!r}")
        if self.similarity not in SIMILARITIES:
            raise ValueError(f"Similarité inconnue : {self.similarity!r}")
        if not self.hidden:
            raise ValueError("Les tours doivent avoir au moins une couche.")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError(f"dropout hors de [0,1) : {self.dropout}")

    @property
    def d_out(self) -> int:
        return self.hidden[-1]


class Tower(nn.Module):
    """MLP : Linear + ReLU + Dropout sur les couches cachées, dernière couche linéaire."""

    def __init__(self, in_dim: int, sizes, dropout: float):
        super().__init__()
        layers = []
        for depth, size in enumerate(sizes):
            linear = nn.Linear(in_dim, size)
            nn.init.kaiming_normal_(linear.weight, nonlinearity='relu')
            nn.init.zeros_(linear.bias)
            layers.append(linear)
            if depth < len(sizes) - 1:
                layers += [nn.ReLU(), nn.Dropout(dropout)]
            in_dim = size
        self.layers = nn.Sequential(*layers)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.layers(x)


class TwoTowerModel(nn.Module):
    def __init__(self, spec: ModelSpec):
        super().__init__()
        self.spec = spec
        self.user_embedding = nn.Embedding(spec.num_users, spec.d_in)
        self.item_embedding = nn.Embedding(spec.num_items, spec.d_in)
        nn.init.normal_(self.user_embedding.weight, mean=0.0, std=0.01)
        nn.init.normal_(self.item_embedding.weight, mean=0.0, std=0.01)

        if spec.fusion == 'concat':
            self.interest_projection = nn.Linear(spec.num_clusters, spec.d_int, bias=False)
            self.fusion = nn.Linear(spec.d_int + spec.d_in, spec.d_in, bias=False)
            nn.init.normal_(self.interest_projection.weight, std=spec.num_clusters ** -0.5)
            nn.init.normal_(self.fusion.weight, std=(spec.d_int + spec.d_in) ** -0.5)

        self.user_tower = Tower(spec.d_in, spec.hidden, spec.dropout)
        self.item_tower = Tower(spec.d_in, spec.hidden, spec.dropout)

        if spec.fusion == 'attention':
            self.cluster_embedding = nn.Embedding(spec.num_clusters, spec.d_out)
            nn.init.normal_(self.cluster_embedding.weight, mean=0.0, std=0.01)

    @property
    def fusion_mode(self) -> str:
        return self.spec.fusion

    def _finish(self, e: torch.Tensor) -> torch.Tensor:
        return F.normalize(e, p=2, dim=-1) if self.spec.similarity == 'cosine' else e

    def user_vectors(self, users: torch.Tensor, eta: torch.Tensor | None = None) -> torch.Tensor:
        x_u = self.user_embedding(users)
        if self.spec.fusion == 'concat':
            if eta is None:
                raise ValueError("Fusion concat : profil d'intérêt η manquant.")
            projected = self.interest_projection(eta.to(x_u.dtype))
            x_u = self.fusion(torch.cat((projected, x_u), dim=-1))
        return self._finish(self.user_tower(x_u))

    def item_vectors(self, items: torch.Tensor) -> torch.Tensor:
        return self._finish(self.item_tower(self.item_embedding(items)))

    def attention_weights(self, e_u: torch.Tensor) -> torch.Tensor:
        """α_{u,j} = softmax_j ⟨e_u, c_j⟩, une ligne par utilisateur."""
        if self.spec.fusion != 'attention':
            raise ValueError("attention_weights n'existe qu'en mode attention.")
        return torch.softmax(e_u @ self.cluster_embedding.weight.T, dim=-1)

    def forward(self, users, items, eta=None, item_clusters=None) -> torch.Tensor:
        """Logits ŷ pour des paires (user, item) alignées."""
        e_u = self.user_vectors(users, eta)
        e_i = self.item_vectors(items)
        logits = (e_u * e_i).sum(dim=-1)
        if self.spec.fusion == 'attention':
            if item_clusters is None:
                raise ValueError("Mode attention : clusters des items requis.")
            alpha = self.attention_weights(e_u)
            logits = logits * alpha.gather(-1, item_clusters.unsqueeze(-1)).squeeze(-1)
        return logits


# ================= OPÉRATIONS UNITAIRES =================

def _eta_tensor(model: TwoTowerModel, eta) -> torch.Tensor | None:
    if eta is None:
        return None
    dense = eta.dense() if isinstance(eta, InterestProfile) else eta
    return torch.as_tensor(dense, dtype=model.user_embedding.weight.dtype)


def user_forward(model: TwoTowerModel, user: int, eta=None, train_mode: bool = False) -> torch.Tensor:
    """e_u d'un utilisateur ; dropout actif seulement si `train_mode`."""
    previous = model.training
    model.train(train_mode)
    try:
        users = torch.tensor([user])
        eta_t = _eta_tensor(model, eta)
        return model.user_vectors(users, None if eta_t is None else eta_t.unsqueeze(0))[0]
    finally:
        model.train(previous)


def item_forward(model: TwoTowerModel, item: int, train_mode: bool = False) -> torch.Tensor:
    previous = model.training
    model.train(train_mode)
    try:
        return model.item_vectors(torch.tensor([item]))[0]
    finally:
        model.train(previous)


def score(e_u, e_i) -> torch.Tensor:
    e_u, e_i = torch.as_tensor(e_u), torch.as_tensor(e_i)
    if e_u.shape != e_i.shape:
        raise ValueError(f"Dimensions différentes : {tuple(e_u.shape)} vs {tuple(e_i.shape)}")
    return torch.dot(e_u, e_i)


def score_attention(model: TwoTowerModel, e_u, e_i, item_cluster: int) -> torch.Tensor:
    """
    α_{u,c} · ⟨e_u, e_i⟩ avec c le cluster de l'item. α ne dépend que de e_u :
    le profil η n'intervient pas dans ce mode.
    """
    if model.spec.fusion != 'attention':
        raise ValueError("score_attention exige fusion = attention.")
    if not 0 <= item_cluster < model.spec.num_clusters:
        raise ValueError(f"Cluster inconnu : {item_cluster}")
    e_u = torch.as_tensor(e_u)
    alpha = model.attention_weights(e_u.unsqueeze(0))[0, item_cluster]
    return alpha * score(e_u, e_i)
