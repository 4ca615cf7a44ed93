"""JSON wire codec for job metadata.

The wire shape is a flat object with a `"$type"` discriminator whose suffix
after the final dot names the record type; the namespace prefix is
configurable (default ``ccrs.model``) and the historical
``org.xsede.jobrunner.model.ModelApi`` namespace is accepted for
compatibility with existing page embeds. Optional string fields are encoded
as JSON arrays: ``[]`` means absent, ``["x"]`` means present; documents
never contain JSON null. ``containerType`` is a nested object carrying its
own ``$type``.
"""

from __future__ import annotations

import json
from typing import Any, Final, Mapping, Union

from ccrs.model import ContainerType, JobMetadata, MountSpec, check_metadata

DEFAULT_NAMESPACE: Final[str] = "ccrs.model"
COMPAT_NAMESPACE: Final[str] = "org.xsede.jobrunner.model.ModelApi"

METADATA_TYPE: Final[str] = "SysJobMetaData"

# Canonical wire name per container type, named after the runtime each
# strategy models, plus accepted aliases.
_CONTAINER_WIRE_NAMES: Final[dict[ContainerType, str]] = {
    ContainerType.IMAGE_PER_JOB: "Singularity",
    ContainerType.SHARED_CONTAINER: "SystemdNspawn",
    ContainerType.LOCAL_SANDBOX: "LocalSandbox",
}
_CONTAINER_PARSE_NAMES: Final[dict[str, ContainerType]] = {
    "Singularity": ContainerType.IMAGE_PER_JOB,
    "ImagePerJob": ContainerType.IMAGE_PER_JOB,
    "SystemdNspawn": ContainerType.SHARED_CONTAINER,
    "Nspawn": ContainerType.SHARED_CONTAINER,
    "SharedContainer": ContainerType.SHARED_CONTAINER,
    "LocalSandbox": ContainerType.LOCAL_SANDBOX,
}

_OPTIONAL_FIELDS: Final[tuple[str, ...]] = (
    "shell",
    "containerId",
    "image",
    "overlay",
    "address",
    "hostname",
    "url",
)


def container_wire_name(container_type: ContainerType) -> str:
    """Canonical wire spelling of a container type."""
    return _CONTAINER_WIRE_NAMES[container_type]


_ALL_FIELDS: Final[frozenset[str]] = frozenset(
    ("$type", "containerType", "binds", "user") + _OPTIONAL_FIELDS
)

Document = Union[str, bytes, Mapping[str, Any]]


class WireError(ValueError):
    """Base class for metadata decode failures."""


class UnknownTypeError(WireError):
    """The `$type` discriminator names no known record type or namespace."""


class MissingFieldError(WireError):
    """A required field is absent from the document."""


class MalformedOptionalError(WireError):
    """An optional field is not a 0- or 1-element array of strings."""


class InvariantViolationError(WireError):
    """The decoded record violates the metadata type invariants."""

    def __init__(self, violations: list[str]):
        super().__init__("; ".join(violations))
        self.violations = violations


class MetadataCodec:
    """Encodes and decodes `JobMetadata` in the wire shape above.

    `namespace` controls the prefix emitted on serialization; parsing
    accepts the configured namespace, the default namespace, and the
    compatibility namespace.
    """

    def __init__(self, namespace: str = DEFAULT_NAMESPACE, extra_namespaces: tuple[str, ...] = ()):
        self.namespace = namespace
        self.accepted = {namespace, DEFAULT_NAMESPACE, COMPAT_NAMESPACE, *extra_namespaces}

    # -- decoding ---------------------------------------------------------

    def parse(self, document: Document) -> JobMetadata:
        """Decode a JSON document into validated `JobMetadata`.

        Raises `UnknownTypeError`, `MissingFieldError`,
        `MalformedOptionalError`, or `InvariantViolationError`.
        """
        obj = self._as_object(document)
        self._check_type_tag(obj, METADATA_TYPE)
        unexpected = set(obj) - _ALL_FIELDS
        if unexpected:
            raise WireError(f"unexpected fields: {sorted(unexpected)}")

        container_type = self._parse_container_type(obj)
        user = obj.get("user")
        if user is None:
            raise MissingFieldError("user")
        if not isinstance(user, str):
            raise WireError("user must be a string")

        optionals = {name: self._optional(obj, name) for name in _OPTIONAL_FIELDS}
        binds = self._parse_binds(obj)

        meta = JobMetadata(
            container_type=container_type,
            user=user,
            shell=optionals["shell"],
            container_id=optionals["containerId"],
            image=optionals["image"],
            binds=binds,
            overlay=optionals["overlay"],
            address=optionals["address"],
            hostname=optionals["hostname"],
            url=optionals["url"],
        )
        violations = check_metadata(meta)
        if violations:
            raise InvariantViolationError(violations)
        return meta

    def _as_object(self, document: Document) -> Mapping[str, Any]:
        if isinstance(document, (str, bytes)):
            try:
                document = json.loads(document)
            except json.JSONDecodeError as exc:
                raise WireError(f"invalid JSON: {exc}") from exc
        if not isinstance(document, Mapping):
            raise WireError("metadata document must be a JSON object")
        return document

    def _check_type_tag(self, obj: Mapping[str, Any], expected: str) -> None:
        tag = obj.get("$type")
        if tag is None:
            raise MissingFieldError("$type")
        if not isinstance(tag, str) or "." not in tag:
            raise UnknownTypeError(f"malformed $type: {tag!r}")
        namespace, _, suffix = tag.rpartition(".")
        if suffix != expected:
            raise UnknownTypeError(f"unknown record type: {suffix}")
        if namespace not in self.accepted:
            raise UnknownTypeError(f"unknown namespace: {namespace}")

    def _parse_container_type(self, obj: Mapping[str, Any]) -> ContainerType:
        nested = obj.get("containerType")
        if nested is None:
            raise MissingFieldError("containerType")
        if not isinstance(nested, Mapping):
            raise WireError("containerType must be an object")
        tag = nested.get("$type")
        if tag is None:
            raise MissingFieldError("containerType.$type")
        if not isinstance(tag, str) or "." not in tag:
            raise UnknownTypeError(f"malformed containerType $type: {tag!r}")
        namespace, _, suffix = tag.rpartition(".")
        if namespace not in self.accepted:
            raise UnknownTypeError(f"unknown namespace: {namespace}")
        try:
            return _CONTAINER_PARSE_NAMES[suffix]
        except KeyError:
            raise UnknownTypeError(f"unknown container type: {suffix}") from None

    def _optional(self, obj: Mapping[str, Any], name: str) -> str | None:
        if name not in obj:
            raise MissingFieldError(name)
        value = obj[name]
        if not isinstance(value, list):
            raise MalformedOptionalError(f"{name} must be an array (0 or 1 elements)")
        if len(value) == 0:
            return None
        if len(value) > 1:
            raise MalformedOptionalError(f"{name} has {len(value)} elements, at most 1 allowed")
        if not isinstance(value[0], str):
            raise MalformedOptionalError(f"{name} element must be a string")
        return value[0]

    def _parse_binds(self, obj: Mapping[str, Any]) -> tuple[MountSpec, ...]:
        raw = obj.get("binds")
        if raw is None:
            raise MissingFieldError("binds")
        if not isinstance(raw, list):
            raise WireError("binds must be an array")
        binds = []
        for i, entry in enumerate(raw):
            if not isinstance(entry, Mapping):
                raise WireError(f"binds[{i}] must be an object")
            for key in ("hostPath", "containerPath"):
                if key not in entry:
                    raise MissingFieldError(f"binds[{i}].{key}")
                if not isinstance(entry[key], str):
                    raise WireError(f"binds[{i}].{key} must be a string")
            read_only = entry.get("readOnly", False)
            if not isinstance(read_only, bool):
                raise WireError(f"binds[{i}].readOnly must be a boolean")
            binds.append(
                MountSpec(
                    host_path=entry["hostPath"],
                    container_path=entry["containerPath"],
                    read_only=read_only,
                )
            )
        return tuple(binds)

    # -- encoding ---------------------------------------------------------

    def to_document(self, meta: JobMetadata) -> dict[str, Any]:
        """Encode metadata as a JSON-ready dict in canonical field order."""

        def opt(value: str | None) -> list[str]:
            return [] if value is None else [value]

        return {
            "$type": f"{self.namespace}.{METADATA_TYPE}",
            "shell": opt(meta.shell),
            "containerType": {
                "$type": f"{self.namespace}.{_CONTAINER_WIRE_NAMES[meta.container_type]}"
            },
            "containerId": opt(meta.container_id),
            "image": opt(meta.image),
            "binds": [
                {
                    "hostPath": b.host_path,
                    "containerPath": b.container_path,
                    "readOnly": b.read_only,
                }
                for b in meta.binds
            ],
            "overlay": opt(meta.overlay),
            "user": meta.user,
            "address": opt(meta.address),
            "hostname": opt(meta.hostname),
            "url": opt(meta.url),
        }

    def serialize(self, meta: JobMetadata) -> str:
        """Encode metadata as JSON text; `parse(serialize(m)) == m`."""
        return json.dumps(self.to_document(meta), indent=2)


_DEFAULT_CODEC = MetadataCodec()


def parse_metadata(document: Document) -> JobMetadata:
    """Decode with the default namespace configuration."""
    return _DEFAULT_CODEC.parse(document)


def serialize_metadata(meta: JobMetadata) -> str:
    """Encode with the default namespace configuration."""
    return _DEFAULT_CODEC.serialize(meta)
