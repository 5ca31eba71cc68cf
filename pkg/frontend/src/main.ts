// Browser shell: websocket wiring, controls, and the scrolling spectrogram.

import { encodeControl } from './protocol.js';
import { UiState, initialState, onMessage } from './state.js';
import { renderSpectrogram } from './render.js';

const state: UiState = initialState();

const canvas = document.getElementById('spectrogram') as HTMLCanvasElement;
const ctx = canvas.getContext('2d')!;
const toggle = document.getElementById('toggle') as HTMLButtonElement;
const modelSelect = document.getElementById('model') as HTMLSelectElement;
const inSlider = document.getElementById('in-buffer') as HTMLInputElement;
const outSlider = document.getElementById('out-buffer') as HTMLInputElement;
const inLabel = document.getElementById('in-buffer-label')!;
const outLabel = document.getElementById('out-buffer-label')!;
const inferenceEl = document.getElementById('inference-ms')!;
const endToEndEl = document.getElementById('end-to-end-ms')!;
const statusEl = document.getElementById('connection')!;
const errorEl = document.getElementById('last-error')!;

const socket = new WebSocket(`ws://${location.host}/ws`);
socket.binaryType = 'arraybuffer';

function send(frame: Uint8Array): void {
  if (socket.readyState === WebSocket.OPEN) {
    socket.send(new TextDecoder().decode(frame));
  }
}

socket.onopen = () => {
  state.connected = true;
};
socket.onclose = () => {
  state.connected = false;
};
socket.onmessage = (event: MessageEvent) => {
  if (typeof event.data === 'string') {
    onMessage(state, event.data);
  } else {
    // binary frames may be spectrogram columns or canonical-JSON telemetry
    const bytes = new Uint8Array(event.data as ArrayBuffer);
    if (bytes.length >= 4 && bytes[0] === 0x53 && bytes[1] === 0x50 && bytes[2] === 0x43) {
      onMessage(state, bytes);
    } else {
      onMessage(state, new TextDecoder().decode(bytes));
    }
  }
  syncControls();
};

// controls emit messages; the displayed state changes only on acknowledgment
toggle.onclick = () => {
  send(encodeControl('set_bypass', !state.bypass));
};
modelSelect.onchange = () => {
  send(encodeControl('set_enhancer', modelSelect.value));
};
function sendBuffers(): void {
  send(
    encodeControl('set_buffer_ms', {
      input_ms: Number(inSlider.value),
      output_ms: Number(outSlider.value),
    }),
  );
}
inSlider.onchange = sendBuffers;
outSlider.onchange = sendBuffers;

function syncControls(): void {
  statusEl.textContent = state.connected ? (state.busy ? 'connected (read-only)' : 'connected') : 'disconnected';
  toggle.textContent = state.bypass ? 'Enhancement: OFF (bypass)' : 'Enhancement: ON';
  toggle.className = state.bypass ? 'off' : 'on';
  if (modelSelect.options.length !== state.enhancers.length) {
    modelSelect.innerHTML = '';
    for (const e of state.enhancers) {
      const opt = document.createElement('option');
      opt.value = e.id;
      opt.textContent = e.display_name;
      modelSelect.appendChild(opt);
    }
  }
  modelSelect.value = state.enhancerId;
  inLabel.textContent = `${state.bufferMs.input} ms`;
  outLabel.textContent = `${state.bufferMs.output} ms`;
  if (state.latency) {
    inferenceEl.textContent = `${state.latency.inference_ms.toFixed(1)} ms`;
    endToEndEl.textContent = `${state.latency.end_to_end_ms.toFixed(0)} ms`;
  }
  errorEl.textContent = state.lastError ?? '';
}

const pixels = new Uint8ClampedArray(canvas.width * canvas.height * 4);
const image = new ImageData(pixels, canvas.width, canvas.height);

function draw(): void {
  renderSpectrogram(state.ring, canvas.width, canvas.height, pixels);
  ctx.putImageData(image, 0, 0);
  requestAnimationFrame(draw);
}
requestAnimationFrame(draw);
