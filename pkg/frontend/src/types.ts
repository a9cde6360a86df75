// Wire types for the REST/WebSocket API. The console never invents state:
// everything rendered comes from these payloads.

export type Severity = "Green" | "Yellow" | "Red";
export type AlertState = "Open" | "Acknowledged" | "Resolved";
export type EnrollmentState = "Candidate" | "Enrolled" | "Declined";

export interface ScoreSnapshot {
  patient_id: string;
  at: string;
  active_flags: string[];
  score: number;
  severity: Severity;
  location_mode_used: "Home" | "Away";
}

export interface AlertEvent {
  alert_id: string;
  patient_id: string;
  score: ScoreSnapshot;
  created_at: string;
  state: AlertState;
  acked_by: string | null;
  notified: string[];
}

export interface QueueItem {
  patient_id: string;
  probability: number;
  rank: number;
  enrollment: EnrollmentState;
  highlights: {
    age: number | null;
    ef_percent: number | null;
    nyha: string | null;
    nt_probnp_pg_ml: number | null;
  };
}

export interface PatientDetail {
  patient: Record<string, unknown> & { patient_id: string; enrollment: EnrollmentState };
  score: ScoreSnapshot;
}

export interface ApiError {
  error: string;
  detail: string;
}
