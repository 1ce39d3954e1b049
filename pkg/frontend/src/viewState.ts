// Pure view-state reducer for the session screen.
//
// Every server message flows through applyServerMessage; the DOM layer only
// renders the resulting state. Captions live exactly as long as the segment
// duration the server delivered; the self-view indicator always equals the
// last VisibilityUpdate.

import type { AuxReason, StageName, WireMessage } from './types.js'

export type ActiveCaption = {
  utteranceId: string
  text: string
  sourceText: string | null
  speaker: string
  shownAt: number
  durationMs: number
}

export type PendingPrompt = {
  itemId: string
  promptKind: string
  direction: string
  nativeText: string
  foreignText: string
  box: number
}

export type GradedAnswer = {
  itemId: string
  similarity: number
  correct: boolean
  box: number
}

export type IncomingCaption = {
  utteranceId: string
  text: string
  sourceText: string | null
}

export type ViewState = {
  connection: 'connecting' | 'joined' | 'started' | 'closed'
  stage: StageName
  caption: ActiveCaption | null
  incomingCaption: IncomingCaption | null
  auxReason: AuxReason
  visible: boolean
  visibleCause: string | null
  selfViewShown: boolean
  pendingPrompt: PendingPrompt | null
  lastAnswer: GradedAnswer | null
  metrics: Record<string, unknown> | null
  lastError: string | null
}

export function initialViewState(): ViewState {
  return {
    connection: 'connecting',
    stage: 'Idle',
    caption: null,
    incomingCaption: null,
    auxReason: 'none',
    visible: false,
    visibleCause: null,
    selfViewShown: false,
    pendingPrompt: null,
    lastAnswer: null,
    metrics: null,
    lastError: null,
  }
}

/** Remaining caption lifetime in ms; 0 when none is active. */
export function captionRemaining(view: ViewState, now: number): number {
  if (!view.caption) return 0
  return Math.max(view.caption.shownAt + view.caption.durationMs - now, 0)
}

/** Drop the caption once its delivered duration has fully elapsed. */
export function expireCaption(view: ViewState, now: number): ViewState {
  if (view.caption && captionRemaining(view, now) === 0) {
    return { ...view, caption: null }
  }
  return view
}

/** Dismiss the practice card without sending anything (window ended). */
export function dismissPrompt(view: ViewState): ViewState {
  return view.pendingPrompt ? { ...view, pendingPrompt: null } : view
}

export function applyServerMessage(view: ViewState, msg: WireMessage, now: number): ViewState {
  const p = msg.payload
  switch (msg.type) {
    case 'Join': {
      const started = p.started === true
      return { ...view, connection: started ? 'started' : 'joined' }
    }
    case 'Caption': {
      // The batch caption arrives just ahead of its SynthesizedStart; stash
      // it so the start message can show it for the whole segment.
      return {
        ...view,
        incomingCaption: {
          utteranceId: String(p.utterance_id),
          text: String(p.text ?? ''),
          sourceText: p.source_text != null ? String(p.source_text) : null,
        },
      }
    }
    case 'SynthesizedStart': {
      const id = String(p.utterance_id)
      const stash = view.incomingCaption?.utteranceId === id ? view.incomingCaption : null
      const caption: ActiveCaption = {
        utteranceId: id,
        text: String(p.caption ?? stash?.text ?? ''),
        sourceText: stash?.sourceText ?? null,
        speaker: String(p.speaker ?? ''),
        shownAt: now,
        durationMs: Number(p.duration_ms ?? 0),
      }
      return { ...view, caption, incomingCaption: null }
    }
    case 'SynthesizedEnd': {
      if (!view.caption || view.caption.utteranceId !== String(p.utterance_id)) {
        console.warn('ignoring out-of-order SynthesizedEnd', p.utterance_id)
        return view
      }
      return { ...view, caption: null }
    }
    case 'StageUpdate': {
      const stage = String(p.stage) as StageName
      let next: ViewState = { ...view, stage }
      if ((stage === 'Speaking' || stage === 'Viewing') && next.pendingPrompt) {
        // The free window ended; the card goes away without a message.
        next = { ...next, pendingPrompt: null }
      }
      return next
    }
    case 'AuxiliaryPicture':
      return { ...view, auxReason: String(p.reason ?? 'none') as AuxReason }
    case 'VisibilityUpdate': {
      const visible = p.visible === true
      return {
        ...view,
        visible,
        visibleCause: p.cause != null ? String(p.cause) : null,
        selfViewShown: visible,
      }
    }
    case 'LearningPrompt': {
      if (view.pendingPrompt) {
        console.warn('replacing unexpected second learning prompt')
      }
      return {
        ...view,
        pendingPrompt: {
          itemId: String(p.item_id),
          promptKind: String(p.prompt_kind ?? 'Review'),
          direction: String(p.direction ?? ''),
          nativeText: String(p.native_text ?? ''),
          foreignText: String(p.foreign_text ?? ''),
          box: Number(p.box ?? 1),
        },
      }
    }
    case 'LearningAnswer': {
      const graded: GradedAnswer = {
        itemId: String(p.item_id),
        similarity: Number(p.similarity ?? 0),
        correct: p.correct === true,
        box: Number(p.box ?? 1),
      }
      const clearPrompt = view.pendingPrompt?.itemId === graded.itemId
      return {
        ...view,
        lastAnswer: graded,
        pendingPrompt: clearPrompt ? null : view.pendingPrompt,
      }
    }
    case 'MetricsSnapshot':
      return { ...view, metrics: (p.metrics as Record<string, unknown>) ?? null }
    case 'Error':
      return { ...view, lastError: String(p.message ?? p.code ?? 'error') }
    default:
      return view
  }
}
