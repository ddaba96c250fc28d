/** In-memory hand-off between views (e.g. follow-up prefills the editor). */

import type { EditorState } from "../editor.js";

let pendingEditor: EditorState | null = null;

export function setPendingEditor(state: EditorState): void {
  pendingEditor = state;
}

export function takePendingEditor(): EditorState | null {
  const state = pendingEditor;
  pendingEditor = null;
  return state;
}
