"""
Configuration documents and run manifests.

A problem instance is a JSON document; the serializers below validate it and
build the immutable model objects. Field errors are reported with dotted keys
(`utility.kappa`) so the command line can name the offending entry.
"""

import json
from pathlib import Path

import numpy as np
from rest_framework import serializers

from .constants import BOUNDS_THETA, D0_FORMS, FAMILY_CHOICES, HEDGE_FORMS, MIN_GRID_NX
from .densities import SignalDensityPair, build_family
from .dual_pide import PideConfig
from .exceptions import ConfigError, InvalidArgument
from .market_signal import MarketParams, ModelConfig, RegimeParams, UtilityParams
from .models import RunManifest
from .quadrature import NODES_PER_PANEL


def _checked(build, attrs):
    """Run a constructor and turn its InvalidArgument into a validation error."""
    try:
        return build(attrs)
    except InvalidArgument as exc:
        raise serializers.ValidationError(str(exc)) from None


class RegimeSerializer(serializers.Serializer):
    a1 = serializers.FloatField()
    a2 = serializers.FloatField()

    @staticmethod
    def build(attrs):
        return RegimeParams(a1=attrs['a1'], a2=attrs['a2'])

    def validate(self, attrs):
        _checked(self.build, attrs)
        return attrs


class MarketSerializer(serializers.Serializer):
    mu1 = serializers.FloatField()
    mu2 = serializers.FloatField()
    sigma = serializers.FloatField()
    r = serializers.FloatField()

    @staticmethod
    def build(attrs):
        return MarketParams(mu1=attrs['mu1'], mu2=attrs['mu2'], sigma=attrs['sigma'], r=attrs['r'])

    def validate(self, attrs):
        _checked(self.build, attrs)
        return attrs


class SignalSerializer(serializers.Serializer):
    """
    Signal block: {lambda, family, params, support}.

    `support` is an optional [low, high] pair; null ends are unbounded.
    """

    family = serializers.ChoiceField(choices=FAMILY_CHOICES)
    params = serializers.DictField()
    support = serializers.ListField(
        child=serializers.FloatField(allow_null=True),
        min_length=2,
        max_length=2,
        required=False,
        allow_null=True,
    )

    def get_fields(self):
        # 'lambda' is a keyword, so the field cannot be declared on the class.
        fields = super().get_fields()
        fields['lambda'] = serializers.FloatField(min_value=0.0)
        return fields

    @staticmethod
    def build(attrs):
        support = attrs.get('support')
        if support is not None:
            low = -np.inf if support[0] is None else support[0]
            high = np.inf if support[1] is None else support[1]
            if not low < high:
                raise InvalidArgument('support must satisfy low < high')
            support = (low, high)
        family = build_family(attrs['family'], attrs['params'])
        return SignalDensityPair(lam=attrs['lambda'], family=family, support_override=support)

    def validate(self, attrs):
        _checked(self.build, attrs)
        return attrs


class UtilitySerializer(serializers.Serializer):
    kappa = serializers.FloatField()

    @staticmethod
    def build(attrs):
        return UtilityParams(kappa=attrs['kappa'])

    def validate(self, attrs):
        _checked(self.build, attrs)
        return attrs


class SolverSerializer(serializers.Serializer):
    """Optional grid block; keys left out take the PideConfig default."""

    n_x = serializers.IntegerField(min_value=MIN_GRID_NX, required=False)
    n_t = serializers.IntegerField(min_value=1, required=False)
    n_q = serializers.IntegerField(min_value=NODES_PER_PANEL, required=False)
    tail_mass = serializers.FloatField(min_value=0.0, max_value=1e-2, required=False)
    m_clamp = serializers.FloatField(required=False, allow_null=True)
    eps_pos = serializers.FloatField(required=False)
    bounds_theta = serializers.ChoiceField(choices=BOUNDS_THETA, required=False)
    bound_tol = serializers.FloatField(min_value=0.0, required=False)

    @staticmethod
    def build(attrs):
        return PideConfig(**attrs)

    def validate(self, attrs):
        _checked(self.build, attrs)
        return attrs


class ModelConfigSerializer(serializers.Serializer):
    """
    Full problem instance.

    `create()` returns the pair (ModelConfig, PideConfig).
    """

    regime = RegimeSerializer()
    market = MarketSerializer()
    signal = SignalSerializer()
    utility = UtilitySerializer()
    horizon = serializers.FloatField()
    x0 = serializers.FloatField(min_value=0.0, max_value=1.0)
    v0 = serializers.FloatField(default=1.0)
    s0 = serializers.FloatField(default=1.0)
    regime_prior = serializers.FloatField(min_value=0.0, max_value=1.0, required=False, allow_null=True)
    d0_form = serializers.ChoiceField(choices=D0_FORMS, default='squared')
    hedge_form = serializers.ChoiceField(choices=HEDGE_FORMS, default='filtered')
    solver = SolverSerializer(required=False)

    def validate_horizon(self, value):
        if value <= 0:
            raise serializers.ValidationError('horizon must be positive')
        return value

    def validate(self, attrs):
        if attrs['v0'] <= 0:
            raise serializers.ValidationError({'v0': 'initial wealth must be positive'})
        if attrs['s0'] <= 0:
            raise serializers.ValidationError({'s0': 'initial asset price must be positive'})
        return attrs

    def create(self, validated_data):
        model = ModelConfig(
            regime=RegimeSerializer.build(validated_data['regime']),
            market=MarketSerializer.build(validated_data['market']),
            signal=SignalSerializer.build(validated_data['signal']),
            utility=UtilitySerializer.build(validated_data['utility']),
            horizon=validated_data['horizon'],
            x0=validated_data['x0'],
            v0=validated_data['v0'],
            s0=validated_data['s0'],
            regime_prior=validated_data.get('regime_prior'),
            d0_form=validated_data['d0_form'],
            hedge_form=validated_data['hedge_form'],
        )
        return model, SolverSerializer.build(validated_data.get('solver', {}))


class RunManifestSerializer(serializers.ModelSerializer):
    """
    Serializer for the RunManifest model.

    Renders the record written as manifest.json at the end of every command.
    """

    class Meta:
        model = RunManifest
        fields = '__all__'


def flatten_errors(detail, prefix=''):
    """Map nested serializer errors to {'dotted.key': [messages]}."""
    flat = {}
    if isinstance(detail, dict):
        for key, value in detail.items():
            name = prefix if key == 'non_field_errors' else (f'{prefix}.{key}' if prefix else str(key))
            for dotted, messages in flatten_errors(value, name).items():
                flat.setdefault(dotted, []).extend(messages)
    elif isinstance(detail, list) and detail and all(isinstance(d, (dict, list)) for d in detail):
        for i, value in enumerate(detail):
            flat.update(flatten_errors(value, f'{prefix}.{i}'))
    else:
        messages = detail if isinstance(detail, list) else [detail]
        flat[prefix or 'config'] = [str(m) for m in messages]
    return flat


def _parse_value(text):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def apply_overrides(document: dict, overrides) -> dict:
    """
    Set dotted keys in a copy of `document`.

    Each override is 'dotted.key=value'; the value is read as JSON when it
    parses (numbers, null, lists) and as a plain string otherwise.
    """
    document = json.loads(json.dumps(document))
    for item in overrides or ():
        key, sep, text = item.partition('=')
        if not sep or not key:
            raise ConfigError({'--set': [f'expected dotted.key=value, got {item!r}']})
        node = document
        parts = key.split('.')
        for part in parts[:-1]:
            child = node.get(part)
            if not isinstance(child, dict):
                child = node[part] = {}
            node = child
        node[parts[-1]] = _parse_value(text)
    return document


def apply_defaults(document: dict, defaults) -> dict:
    """Fill dotted keys missing from a copy of `document`; present keys win."""
    document = json.loads(json.dumps(document))
    for key, value in (defaults or {}).items():
        node = document
        parts = key.split('.')
        for part in parts[:-1]:
            node = node.setdefault(part, {})
            if not isinstance(node, dict):
                break
        else:
            node.setdefault(parts[-1], value)
    return document


def read_document(path) -> dict:
    try:
        with open(path, encoding='utf-8') as handle:
            document = json.load(handle)
    except FileNotFoundError:
        raise ConfigError({'--config': [f'no such file: {path}']}) from None
    except json.JSONDecodeError as exc:
        raise ConfigError({'--config': [f'{Path(path).name} is not valid JSON: {exc}']}) from None
    if not isinstance(document, dict):
        raise ConfigError({'--config': ['top level must be a JSON object']})
    return document


def build_config(document: dict):
    """Validate a configuration document and return (ModelConfig, PideConfig)."""
    serializer = ModelConfigSerializer(data=document)
    if not serializer.is_valid():
        raise ConfigError(flatten_errors(serializer.errors))
    return serializer.save()


def load_config(path, overrides=(), defaults=None):
    """
    Read, override and validate a JSON configuration file.

    `defaults` ({dotted.key: value}) fill keys the file leaves out; `overrides`
    then replace whatever is there.

    Returns:
        tuple: (ModelConfig, PideConfig, document) where `document` is the
        effective JSON after defaults and overrides, echoed into the run manifest.
    """
    document = apply_overrides(apply_defaults(read_document(path), defaults), overrides)
    model, solver = build_config(document)
    return model, solver, document
