/** Payload types mirroring the REST API responses. */

export type StageName =
  | 'draft_proposed'
  | 'deficiency_shown'
  | 'error_type_shown'
  | 'action_shown'
  | 'rebuttal_shown'
  | 'accepted';

export interface LegalMove {
  type: 'accept' | 'reject' | 'override' | 'edit';
  requires_feedback?: boolean;
  allowed?: string[];
}

export interface SegmentView {
  segment_id: string;
  ordinal: number;
  kind: string;
  text: string;
}

export interface DraftView {
  text: string;
  paradigm: string;
  context_used: string;
  segment_id: string | null;
}

export interface LabelsView {
  deficiency: string | null;
  deficiency_provenance: string | null;
  error_type: string | null;
  error_type_provenance: string | null;
  action: string | null;
  action_provenance: string | null;
}

export interface FlowView {
  segment: SegmentView;
  stage: StageName;
  draft: DraftView | null;
  draft_error: string | null;
  labels: LabelsView;
  feedback: { ts: number; stage: string; text: string }[];
  edit: string | null;
  statement: string | null;
  legal_moves: LegalMove[];
}

export interface SessionView {
  session_id: string;
  paper_title: string;
  review: string;
  context_mode: string;
  final_rebuttal: string | null;
  progress: { accepted: number; total: number };
  segments: FlowView[];
}

export interface ApiErrorBody {
  code: string;
  message: string;
  details?: unknown;
}
