// UI state driven purely by acknowledged server messages: the rendered
// controls always mirror the last status message, never an optimistic guess.

import {
  LatencyPayload,
  StatusPayload,
  TelemetryMessage,
  parseSpectrogramColumn,
  parseTelemetry,
} from './protocol.js';
import { ColumnRing } from './ring.js';

export const HISTORY_COLUMNS = 512;
export const SPECTROGRAM_BINS = 513;

export interface UiState {
  connected: boolean;
  bypass: boolean;
  enhancerId: string;
  enhancers: StatusPayload['enhancers'];
  bufferMs: { input: number; output: number };
  latency: LatencyPayload | null;
  lastError: string | null;
  framesProcessed: number;
  underruns: number;
  drops: number;
  busy: boolean;
  parseFailures: number;
  columnsReceived: number;
  ring: ColumnRing;
}

export function initialState(): UiState {
  return {
    connected: false,
    bypass: false,
    enhancerId: 'passthrough',
    enhancers: [],
    bufferMs: { input: 32, output: 32 },
    latency: null,
    lastError: null,
    framesProcessed: 0,
    underruns: 0,
    drops: 0,
    busy: false,
    parseFailures: 0,
    columnsReceived: 0,
    ring: new ColumnRing(HISTORY_COLUMNS, SPECTROGRAM_BINS),
  };
}

function applyTelemetry(state: UiState, msg: TelemetryMessage): void {
  if (msg.type === 'latency') {
    state.latency = msg.payload;
  } else if (msg.type === 'status') {
    const s = msg.payload;
    state.bypass = s.bypass;
    state.enhancerId = s.enhancer;
    state.enhancers = s.enhancers;
    state.bufferMs = { input: s.buffer_ms.input_ms, output: s.buffer_ms.output_ms };
    state.framesProcessed = s.frames_processed;
    state.underruns = s.underruns;
    state.drops = s.spectrogram_drops;
    state.busy = s.busy;
  } else {
    state.lastError = msg.payload.message;
  }
}

// Single entry point for every socket frame (text or binary); parse failures
// are counted and skipped, never thrown.
export function onMessage(state: UiState, data: string | ArrayBuffer | Uint8Array): UiState {
  if (typeof data === 'string') {
    const msg = parseTelemetry(data);
    if (msg === null) {
      state.parseFailures++;
      return state;
    }
    applyTelemetry(state, msg);
    return state;
  }
  const column = parseSpectrogramColumn(data);
  if (column === null) {
    state.parseFailures++;
    return state;
  }
  state.ring.push(column.values);
  state.columnsReceived++;
  return state;
}

// Snapshot of everything except the pixel history, for tests and debugging.
export function snapshot(state: UiState): Record<string, unknown> {
  return {
    connected: state.connected,
    bypass: state.bypass,
    enhancerId: state.enhancerId,
    enhancers: state.enhancers,
    bufferMs: state.bufferMs,
    latency: state.latency,
    lastError: state.lastError,
    framesProcessed: state.framesProcessed,
    underruns: state.underruns,
    drops: state.drops,
    busy: state.busy,
    parseFailures: state.parseFailures,
    columnsReceived: state.columnsReceived,
    ringLength: state.ring.length,
  };
}
