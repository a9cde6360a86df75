"""HL7 FHIR R4 export: stored samples become Observation resources, patient
windows become collection Bundles.

Vitals map to LOINC codes with UCUM units; environmental metrics, which
have no obvious LOINC codes, use a project-local code system. Metrics
absent from the mapping table (booleans, raw RR-interval lists, behavioral
counters) are excluded from export rather than shoehorned into
valueQuantity.
"""

from __future__ import annotations

from dataclasses import dataclass
from datetime import datetime
from typing import Any, Mapping, Union

from .model import (
    EnvMetric,
    EnvSample,
    Metric,
    VitalMetric,
    VitalSample,
    format_rfc3339,
    metric_from_key,
    parse_rfc3339,
)
from .store import SeriesStore

LOINC_SYSTEM = "http://loinc.org"
UCUM_SYSTEM = "http://unitsofmeasure.org"
ENV_SYSTEM = "urn:predihealth:metric"


class FhirError(Exception):
    code = "fhir_error"


class UnmappedMetric(FhirError):
    code = "unmapped_metric"


class UnknownPatient(FhirError):
    code = "unknown_patient"


@dataclass(frozen=True)
class CodeMapping:
    system: str
    code: str
    display: str
    unit: str  # rendered unit string
    ucum: str  # UCUM code


CODE_MAP: dict[Metric, CodeMapping] = {
    VitalMetric.HEART_RATE: CodeMapping(
        LOINC_SYSTEM, "8867-4", "Heart rate", "beats/min", "/min"
    ),
    VitalMetric.SPO2: CodeMapping(
        LOINC_SYSTEM, "59408-5",
        "Oxygen saturation in Arterial blood by Pulse oximetry", "%", "%",
    ),
    VitalMetric.WEIGHT: CodeMapping(LOINC_SYSTEM, "29463-7", "Body weight", "kg", "kg"),
    VitalMetric.SYSTOLIC_BP: CodeMapping(
        LOINC_SYSTEM, "8480-6", "Systolic blood pressure", "mmHg", "mm[Hg]"
    ),
    VitalMetric.DIASTOLIC_BP: CodeMapping(
        LOINC_SYSTEM, "8462-4", "Diastolic blood pressure", "mmHg", "mm[Hg]"
    ),
    VitalMetric.RESP_RATE: CodeMapping(
        LOINC_SYSTEM, "9279-1", "Respiratory rate", "breaths/min", "/min"
    ),
    VitalMetric.BODY_TEMP: CodeMapping(
        LOINC_SYSTEM, "8310-5", "Body temperature", "Cel", "Cel"
    ),
    VitalMetric.SDNN: CodeMapping(
        LOINC_SYSTEM, "80404-7",
        "R-R interval.standard deviation (Heart rate variability)", "ms", "ms",
    ),
    EnvMetric.PM1: CodeMapping(ENV_SYSTEM, "pm1", "Particulate matter 1.0 um", "ug/m3", "ug/m3"),
    EnvMetric.PM2_5: CodeMapping(ENV_SYSTEM, "pm2.5", "Particulate matter 2.5 um", "ug/m3", "ug/m3"),
    EnvMetric.PM4: CodeMapping(ENV_SYSTEM, "pm4", "Particulate matter 4.0 um", "ug/m3", "ug/m3"),
    EnvMetric.PM10: CodeMapping(ENV_SYSTEM, "pm10", "Particulate matter 10 um", "ug/m3", "ug/m3"),
    EnvMetric.CO2: CodeMapping(ENV_SYSTEM, "co2", "Carbon dioxide concentration", "ppm", "[ppm]"),
    EnvMetric.AIR_TEMP: CodeMapping(ENV_SYSTEM, "air-temp", "Ambient air temperature", "Cel", "Cel"),
    EnvMetric.HUMIDITY: CodeMapping(ENV_SYSTEM, "humidity", "Relative humidity", "%", "%"),
    EnvMetric.NOISE: CodeMapping(ENV_SYSTEM, "noise", "Ambient noise level", "dB", "dB"),
}

# reverse lookup used by the validator: code -> mapping
_CODE_INDEX: dict[tuple[str, str], CodeMapping] = {
    (m.system, m.code): m for m in CODE_MAP.values()
}

Sample = Union[VitalSample, EnvSample]


def to_observation(sample: Sample) -> dict[str, Any]:
    """Render one stored sample as a FHIR R4 Observation. Numeric value and
    unit are carried through exactly; raises :class:`UnmappedMetric` for
    metrics outside the mapping table."""
    mapping = CODE_MAP.get(sample.metric)
    if mapping is None:
        raise UnmappedMetric(f"no clinical code for metric {sample.metric.value}")
    if isinstance(sample.value, (bool, tuple)):
        raise UnmappedMetric(
            f"{sample.metric.value} value is not a quantity: {sample.value!r}"
        )
    return {
        "resourceType": "Observation",
        "status": "final",
        "code": {
            "coding": [
                {
                    "system": mapping.system,
                    "code": mapping.code,
                    "display": mapping.display,
                }
            ]
        },
        "subject": {"reference": f"Patient/{sample.patient_id}"},
        "effectiveDateTime": format_rfc3339(sample.timestamp),
        "valueQuantity": {
            "value": float(sample.value),
            "unit": mapping.unit,
            "system": UCUM_SYSTEM,
            "code": mapping.ucum,
        },
    }


def export_bundle(
    store: SeriesStore, patient_id: str, t0: datetime, t1: datetime
) -> dict[str, Any]:
    """Collection Bundle of every mappable sample for the patient inside
    [t0, t1], ordered by effectiveDateTime (ties by metric then seq)."""
    if t0 > t1:
        raise ValueError("window start must not exceed window end")
    if not store.has_patient(patient_id):
        raise UnknownPatient(f"no stored series for patient {patient_id}")
    entries: list[tuple[datetime, str, int, dict[str, Any]]] = []
    for key in store.patient_keys(patient_id):
        metric = metric_from_key(key.metric)
        if metric not in CODE_MAP:
            continue
        for point in store.query_window(key, t0, t1).points:
            if isinstance(point.value, (bool, tuple)):
                continue
            sample: Sample
            if isinstance(metric, VitalMetric):
                sample = VitalSample(patient_id, "", metric, point.value, point.timestamp, point.seq)
            else:
                sample = EnvSample(patient_id, "", metric, point.value, point.timestamp, point.seq)
            entries.append((point.timestamp, key.metric, point.seq, to_observation(sample)))
    entries.sort(key=lambda e: (e[0], e[1], e[2]))
    return {
        "resourceType": "Bundle",
        "type": "collection",
        "total": len(entries),
        "entry": [{"resource": resource} for _, _, _, resource in entries],
    }


# --------------------------------------------------------------------------
# Structural validation
# --------------------------------------------------------------------------


def _is_coding_system(uri: Any) -> bool:
    return isinstance(uri, str) and (
        uri.startswith("http://") or uri.startswith("https://") or uri.startswith("urn:")
    )


def validate_resource(resource: Mapping[str, Any]) -> list[str]:
    """Structural check of an Observation document. Total: returns the full
    error list and never raises, so it can screen untrusted input."""
    errors: list[str] = []
    if not isinstance(resource, Mapping):
        return ["resource must be a JSON object"]
    if resource.get("resourceType") != "Observation":
        errors.append("resourceType must be 'Observation'")
    if resource.get("status") not in {"registered", "preliminary", "final", "amended"}:
        errors.append("missing or invalid status")

    code = resource.get("code")
    coding = None
    if not isinstance(code, Mapping) or not isinstance(code.get("coding"), list) or not code["coding"]:
        errors.append("missing code.coding")
    else:
        coding = code["coding"][0]
        if not isinstance(coding, Mapping):
            errors.append("code.coding[0] must be an object")
            coding = None
        else:
            if not _is_coding_system(coding.get("system")):
                errors.append("code.coding[0].system must be an http(s) or urn URI")
            if not isinstance(coding.get("code"), str) or not coding.get("code"):
                errors.append("code.coding[0].code missing")
            if not isinstance(coding.get("display"), str) or not coding.get("display"):
                errors.append("code.coding[0].display missing")

    subject = resource.get("subject")
    if not isinstance(subject, Mapping) or not isinstance(subject.get("reference"), str):
        errors.append("missing subject")
    elif not subject["reference"].startswith("Patient/"):
        errors.append("subject.reference must point at a Patient")

    effective = resource.get("effectiveDateTime")
    if not isinstance(effective, str):
        errors.append("missing effectiveDateTime")
    else:
        try:
            parse_rfc3339(effective)
        except ValueError:
            errors.append(f"effectiveDateTime is not RFC 3339: {effective!r}")

    quantity = resource.get("valueQuantity")
    if not isinstance(quantity, Mapping):
        errors.append("missing valueQuantity")
    else:
        if not isinstance(quantity.get("value"), (int, float)) or isinstance(
            quantity.get("value"), bool
        ):
            errors.append("valueQuantity.value must be numeric")
        if not isinstance(quantity.get("unit"), str) or not quantity.get("unit"):
            errors.append("valueQuantity.unit missing")
        if quantity.get("system") != UCUM_SYSTEM:
            errors.append("valueQuantity.system must be the UCUM system URI")
        if not isinstance(quantity.get("code"), str) or not quantity.get("code"):
            errors.append("valueQuantity.code missing")
        # cross-check against the mapping table when the code is ours
        if coding is not None and not errors:
            mapping = _CODE_INDEX.get((coding.get("system"), coding.get("code")))
            if mapping is not None:
                if quantity.get("unit") != mapping.unit:
                    errors.append(
                        f"unit {quantity.get('unit')!r} does not match canonical "
                        f"{mapping.unit!r} for code {mapping.code}"
                    )
                if quantity.get("code") != mapping.ucum:
                    errors.append(
                        f"UCUM code {quantity.get('code')!r} does not match canonical "
                        f"{mapping.ucum!r} for code {mapping.code}"
                    )
    return errors


def validate_bundle(bundle: Mapping[str, Any]) -> list[str]:
    """Validate a collection Bundle: shape, per-entry Observations, shared
    subject, and timestamp ordering."""
    errors: list[str] = []
    if bundle.get("resourceType") != "Bundle":
        errors.append("resourceType must be 'Bundle'")
    if bundle.get("type") != "collection":
        errors.append("type must be 'collection'")
    entries = bundle.get("entry")
    if not isinstance(entries, list):
        return errors + ["missing entry list"]
    subjects = set()
    previous = None
    for index, entry in enumerate(entries):
        resource = entry.get("resource") if isinstance(entry, Mapping) else None
        if resource is None:
            errors.append(f"entry[{index}] missing resource")
            continue
        for issue in validate_resource(resource):
            errors.append(f"entry[{index}]: {issue}")
        subject = resource.get("subject", {})
        if isinstance(subject, Mapping) and isinstance(subject.get("reference"), str):
            subjects.add(subject["reference"])
        effective = resource.get("effectiveDateTime")
        if isinstance(effective, str):
            try:
                current = parse_rfc3339(effective)
            except ValueError:
                current = None
            if current is not None:
                if previous is not None and current < previous:
                    errors.append(f"entry[{index}] out of timestamp order")
                previous = current
    if len(subjects) > 1:
        errors.append("entries do not share a single subject")
    return errors
