from django import forms
from django.core.validators import MinValueValidator

# ================= FORMULAIRE DE CONFIGURATION DU PIPELINE =================
# Une clé pointée `louvain.resolution` devient le champ `louvain__resolution`.


def field_name(key: str) -> str:
    return key.replace('.', '__')


def config_key(name: str) -> str:
    return name.replace('__', '.')


class CommaListField(forms.CharField):
    """Liste `a,b,c` convertie élément par élément."""

    def __init__(self, *args, item_type=float, **kwargs):
        self.item_type = item_type
        super().__init__(*args, **kwargs)

    def to_python(self, value):
        value = super().to_python(value)
        if not value:
            return ()
        try:
            return tuple(self.item_type(v.strip()) for v in value.split(',') if v.strip())
        except ValueError:
            raise forms.ValidationError(f"Liste invalide : {value!r}")


def _strictly_positive(value):
    if value is not None and value <= 0:
        raise forms.ValidationError("Doit être strictement positif.")


def _open_unit_interval(value):
    if value is not None and not 0.0 < value < 1.0:
        raise forms.ValidationError("Doit être dans (0, 1).")


def _dropout_range(value):
    if value is not None and not 0.0 <= value < 1.0:
        raise forms.ValidationError("Doit être dans [0, 1).")


class PipelineConfigForm(forms.Form):
    """Valide la configuration `clé = valeur` après application des défauts."""

    seed = forms.IntegerField()
    threads = forms.IntegerField(required=False, validators=[MinValueValidator(0)])

    run__name = forms.CharField(required=False)
    paths__artifacts = forms.CharField()

    dataset__path = forms.CharField(required=False)
    dataset__format = forms.ChoiceField(choices=[('movielens', 'MovieLens'), ('csv', 'CSV')])
    dataset__user_column = forms.CharField(required=False)
    dataset__item_column = forms.CharField(required=False)
    dataset__value_column = forms.CharField(required=False)
    dataset__timestamp_column = forms.CharField(required=False)

    filter__min_user_degree = forms.IntegerField(required=False, validators=[MinValueValidator(0)])
    filter__min_item_degree = forms.IntegerField(required=False, validators=[MinValueValidator(0)])

    split__train = forms.FloatField(validators=[_open_unit_interval])
    split__val = forms.FloatField(validators=[_open_unit_interval])
    split__test = forms.FloatField(validators=[_open_unit_interval])
    split__seed = forms.IntegerField(required=False)

    louvain__resolution = forms.FloatField(validators=[_strictly_positive])
    louvain__seed = forms.IntegerField(required=False)
    louvain__max_cluster_size = forms.IntegerField(required=False, validators=[MinValueValidator(1)])

    interest__method = forms.ChoiceField(choices=[('ppr', 'PPR'), ('counts', 'Comptages')])
    interest__damping = forms.FloatField(validators=[_open_unit_interval])
    interest__tolerance = forms.FloatField(validators=[_strictly_positive])
    interest__max_iters = forms.IntegerField(validators=[MinValueValidator(1)])
    interest__batch_size = forms.IntegerField(validators=[MinValueValidator(1)])

    model__d_in = forms.IntegerField(validators=[MinValueValidator(1)])
    model__hidden = CommaListField(item_type=int)
    model__d_int = forms.IntegerField(validators=[MinValueValidator(1)])
    model__fusion = forms.ChoiceField(choices=[('none', 'Vanilla'), ('concat', 'Concaténation'),
                                               ('attention', 'Attention')])
    model__similarity = forms.ChoiceField(choices=[('dot', 'Produit scalaire'), ('cosine', 'Cosinus')])
    model__learning_rate = forms.FloatField(validators=[_strictly_positive])
    model__weight_decay = forms.FloatField(validators=[MinValueValidator(0.0)])
    model__dropout = forms.FloatField(validators=[_dropout_range])
    model__batch_size = forms.IntegerField(validators=[MinValueValidator(1)])
    model__negatives = forms.IntegerField(validators=[MinValueValidator(0)])
    model__max_epochs = forms.IntegerField(validators=[MinValueValidator(1)])
    model__eval_every = forms.IntegerField(validators=[MinValueValidator(1)])
    model__patience = forms.IntegerField(validators=[MinValueValidator(1)])
    model__seed = forms.IntegerField(required=False)

    retrieval__n_clusters = forms.IntegerField(validators=[MinValueValidator(1)])
    retrieval__mode = forms.ChoiceField(choices=[('top', 'Top'), ('sample', 'Échantillonnage')])
    retrieval__k_rec = forms.IntegerField(validators=[MinValueValidator(1)])
    retrieval__seed = forms.IntegerField(required=False)
    retrieval__kmeans_ratio = forms.FloatField(validators=[_open_unit_interval])
    retrieval__n_centroids = forms.IntegerField(validators=[MinValueValidator(1)])
    retrieval__repetitions = forms.IntegerField(validators=[MinValueValidator(1)])

    eval__k_values = CommaListField(item_type=int)

    stability__fractions = CommaListField(item_type=float)
    stability__resolution = forms.FloatField(required=False, validators=[_strictly_positive])

    grid__learning_rate = CommaListField(item_type=float, required=False)
    grid__dropout = CommaListField(item_type=float, required=False)
    grid__resolution = CommaListField(item_type=float, required=False)

    def clean_model__hidden(self):
        hidden = self.cleaned_data['model__hidden']
        if not hidden or any(h < 1 for h in hidden):
            raise forms.ValidationError("Tailles de couches invalides.")
        return hidden

    def clean_eval__k_values(self):
        k_values = self.cleaned_data['eval__k_values']
        if not k_values or any(k < 1 for k in k_values):
            raise forms.ValidationError("k_values doit contenir des entiers >= 1.")
        return tuple(sorted(set(k_values)))

    def clean_stability__fractions(self):
        fractions = self.cleaned_data['stability__fractions']
        if len(fractions) < 2 or any(not 0.0 < f <= 1.0 for f in fractions):
            raise forms.ValidationError("Au moins deux fractions dans (0, 1].")
        return fractions

    def clean_grid__learning_rate(self):
        values = self.cleaned_data['grid__learning_rate']
        if any(v <= 0 for v in values):
            raise forms.ValidationError("Taux d'apprentissage > 0 requis.")
        return values

    def clean_grid__dropout(self):
        values = self.cleaned_data['grid__dropout']
        if any(not 0.0 <= v < 1.0 for v in values):
            raise forms.ValidationError("Dropout dans [0, 1) requis.")
        return values

    def clean_grid__resolution(self):
        values = self.cleaned_data['grid__resolution']
        if any(v <= 0 for v in values):
            raise forms.ValidationError("Résolution > 0 requise.")
        return values

    def clean(self):
        cleaned = super().clean()
        fractions = [cleaned.get(f'split__{part}') for part in ('train', 'val', 'test')]
        if None not in fractions and abs(sum(fractions) - 1.0) > 1e-12:
            raise forms.ValidationError("Les fractions train/val/test doivent sommer à 1.")
        return cleaned
