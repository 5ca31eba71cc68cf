// Wire protocol shared with the backend service: canonical-JSON text frames
// for control/telemetry, fixed-layout binary frames for spectrogram columns.

export type ControlType = 'set_bypass' | 'set_enhancer' | 'set_buffer_ms' | 'get_status';

export interface BufferMs {
  input_ms: number;
  output_ms: number;
}

export interface ControlMessage {
  type: ControlType;
  value: boolean | string | BufferMs | null;
}

export interface LatencyPayload {
  frame_ms: number;
  inference_ms: number;
  input_buffer_ms: number;
  output_buffer_ms: number;
  end_to_end_ms: number;
  measured_end_to_end_ms: number | null;
}

export interface EnhancerInfo {
  id: string;
  display_name: string;
  algorithmic_delay_frames: number;
}

export interface StatusPayload {
  bypass: boolean;
  enhancer: string;
  enhancers: EnhancerInfo[];
  buffer_ms: BufferMs;
  frames_processed: number;
  underruns: number;
  overruns: number;
  errors: number;
  spectrogram_drops: number;
  busy: boolean;
}

export type TelemetryMessage =
  | { type: 'latency'; payload: LatencyPayload }
  | { type: 'status'; payload: StatusPayload }
  | { type: 'error'; payload: { message: string } };

export interface SpectrogramColumn {
  columnIndex: number;
  source: 0 | 1; // 0 = raw, 1 = enhanced
  values: Float32Array; // log-dB, clamped [-80, 0]
}

const SPC_MAGIC = 0x31435053; // 'SPC1' little-endian
const SPC_HEADER_BYTES = 11;

// Canonical JSON: sorted keys, no whitespace — byte-identical to the
// backend's encoder so golden files can be compared exactly.
export function canonicalJson(value: unknown): string {
  if (value === null || typeof value === 'number' || typeof value === 'boolean') {
    return JSON.stringify(value);
  }
  if (typeof value === 'string') {
    return JSON.stringify(value);
  }
  if (Array.isArray(value)) {
    return '[' + value.map(canonicalJson).join(',') + ']';
  }
  const obj = value as Record<string, unknown>;
  const keys = Object.keys(obj).sort();
  return '{' + keys.map((k) => JSON.stringify(k) + ':' + canonicalJson(obj[k])).join(',') + '}';
}

export function encodeControl(type: ControlType, value: ControlMessage['value']): Uint8Array {
  return new TextEncoder().encode(canonicalJson({ type, value }));
}

const TELEMETRY_TYPES = new Set(['latency', 'status', 'error']);

export function parseTelemetry(text: string): TelemetryMessage | null {
  let parsed: unknown;
  try {
    parsed = JSON.parse(text);
  } catch {
    return null;
  }
  if (typeof parsed !== 'object' || parsed === null) return null;
  const msg = parsed as { type?: unknown; payload?: unknown };
  if (typeof msg.type !== 'string' || !TELEMETRY_TYPES.has(msg.type)) return null;
  if (typeof msg.payload !== 'object' || msg.payload === null) return null;
  return msg as TelemetryMessage;
}

// Strict binary parse; returns null on any malformed frame (wrong magic,
// bad source byte, or length != 11 + 4*n_bins).
export function parseSpectrogramColumn(data: ArrayBuffer | Uint8Array): SpectrogramColumn | null {
  const bytes = data instanceof Uint8Array ? data : new Uint8Array(data);
  if (bytes.byteLength < SPC_HEADER_BYTES) return null;
  const view = new DataView(bytes.buffer, bytes.byteOffset, bytes.byteLength);
  if (view.getUint32(0, true) !== SPC_MAGIC) return null;
  const columnIndex = view.getUint32(4, true);
  const source = view.getUint8(8);
  if (source !== 0 && source !== 1) return null;
  const nBins = view.getUint16(9, true);
  if (bytes.byteLength !== SPC_HEADER_BYTES + 4 * nBins) return null;
  const values = new Float32Array(nBins);
  for (let i = 0; i < nBins; i++) {
    values[i] = view.getFloat32(SPC_HEADER_BYTES + 4 * i, true);
  }
  return { columnIndex, source: source as 0 | 1, values };
}
