/** Typed client for the /api/v1 surface. All statistics arrive computed
 * server-side; nothing in the UI ever recomputes them. */

export type Scalar = string | number | boolean;
export type ParamKind = "configuration" | "environment";
export type MetricDirection = "maximize" | "minimize" | "neutral";
export type Reducer = "last" | "first" | "mean" | "max" | "min" | "sum";

export interface ParameterDoc {
  name: string;
  kind: ParamKind;
  values: Scalar[];
  unit?: string | null;
}

export interface MetricDoc {
  name: string;
  direction: MetricDirection;
  unit?: string | null;
}

export interface TemplateDoc {
  id: string;
  name: string;
  script: string;
  parameters: ParameterDoc[];
  declared_metrics: MetricDoc[];
  created_at: string;
}

export interface ProvenanceDoc {
  commit_id?: string | null;
  implementation_version?: string | null;
  extra?: Record<string, string>;
}

export interface StudyDoc {
  id: string;
  template_id: string;
  bound_values: Record<string, Scalar[]>;
  repetitions: number;
  base_seed: number;
  provenance: ProvenanceDoc;
  status: string;
  created_at: string;
}

export interface ProgressDoc {
  study_id: string;
  status: string;
  counts: Record<string, number>;
  total: number;
  throughput_per_min: number;
  eta_s: number | null;
}

export interface WorkerDoc {
  id: string;
  labels: string[];
  last_heartbeat: number;
  state: string;
  current_experiment: string | null;
}

export interface ExperimentDoc {
  id: string;
  study_id: string;
  combo_index: number;
  repetition_index: number;
  assignment: Record<string, Scalar>;
  seed: number;
  status: string;
  attempt: number;
  exit_detail: string | null;
}

export interface GroupSummaryDoc {
  group_key: Record<string, Scalar>;
  count: number;
  mean: number;
  std: number | null;
  min: number;
  q1: number;
  median: number;
  q3: number;
  max: number;
  outliers: number[];
}

export interface ParetoPointDoc {
  group_key?: Record<string, Scalar>;
  experiment_id?: string;
  x: number;
  y: number;
  on_frontier: boolean;
}

export interface MetricRecordDoc {
  experiment_id: string;
  metric: string;
  seq: number;
  value: number;
  wall_offset_ms: number;
}

export interface LogRecordDoc {
  experiment_id: string;
  level: string;
  message: string;
  wall_offset_ms: number;
}

export interface DrilldownDoc {
  experiment: ExperimentDoc;
  metrics: MetricRecordDoc[];
  logs: LogRecordDoc[];
  provenance: ProvenanceDoc;
  attempts: number;
}

export interface FilterDoc {
  parameter: string;
  op: "equals" | "in" | "range";
  value?: Scalar;
  values?: Scalar[];
  lo?: number | null;
  hi?: number | null;
}

export interface CubeRequest {
  study_id: string;
  metric: string;
  reducer?: Reducer;
  filters?: FilterDoc[];
  group_by?: string[];
  include_failed?: boolean;
}

export interface ParetoRequest {
  study_id: string;
  metric_x: string;
  metric_y: string;
  dir_x?: MetricDirection | null;
  dir_y?: MetricDirection | null;
  group_by?: string[];
  reducer_map?: Record<string, Reducer>;
}

export class ApiError extends Error {
  constructor(
    public status: number,
    public code: string,
    message: string,
  ) {
    super(message);
  }
}

async function parseError(response: Response): Promise<never> {
  let code = "error";
  let message = response.statusText;
  try {
    const doc = await response.json();
    code = doc.code ?? code;
    message = doc.message ?? message;
  } catch {
    /* non-JSON error body */
  }
  throw new ApiError(response.status, code, message);
}

export class Api {
  constructor(private base: string = "/api/v1") {}

  private async get<T>(path: string): Promise<T> {
    const response = await fetch(this.base + path);
    if (!response.ok) await parseError(response);
    return response.json() as Promise<T>;
  }

  private async post<T>(path: string, body: unknown): Promise<T> {
    const response = await fetch(this.base + path, {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify(body ?? {}),
    });
    if (!response.ok) await parseError(response);
    return response.json() as Promise<T>;
  }

  listTemplates(): Promise<{ templates: TemplateDoc[] }> {
    return this.get("/templates");
  }

  getTemplate(id: string): Promise<TemplateDoc> {
    return this.get(`/templates/${id}`);
  }

  createTemplate(doc: unknown): Promise<TemplateDoc> {
    return this.post("/templates", doc);
  }

  listStudies(): Promise<{ studies: StudyDoc[] }> {
    return this.get("/studies");
  }

  getStudy(id: string): Promise<StudyDoc> {
    return this.get(`/studies/${id}`);
  }

  createStudy(doc: unknown): Promise<StudyDoc> {
    return this.post("/studies", doc);
  }

  startStudy(id: string): Promise<ProgressDoc> {
    return this.post(`/studies/${id}/start`, {});
  }

  cancelStudy(id: string): Promise<ProgressDoc> {
    return this.post(`/studies/${id}/cancel`, {});
  }

  progress(id: string): Promise<ProgressDoc> {
    return this.get(`/studies/${id}/progress`);
  }

  experiments(id: string): Promise<{ experiments: ExperimentDoc[] }> {
    return this.get(`/studies/${id}/experiments`);
  }

  listWorkers(): Promise<{ workers: WorkerDoc[] }> {
    return this.get("/workers");
  }

  cube(request: CubeRequest): Promise<{ groups: GroupSummaryDoc[] }> {
    return this.post("/analysis/cube", request);
  }

  pareto(request: ParetoRequest): Promise<{ points: ParetoPointDoc[] }> {
    return this.post("/analysis/pareto", request);
  }

  drillDown(experimentId: string): Promise<DrilldownDoc> {
    return this.get(`/experiments/${experimentId}`);
  }

  exportUrl(studyId: string, format: "csv" | "jsonl"): string {
    return `${this.base}/studies/${studyId}/export?format=${format}`;
  }
}
