// DOM wiring for the live session screen. All protocol state lives in the
// pure modules; this file only renders and forwards user gestures.

import { TimelineModel } from './timeline.js'
import type { ViewState } from './viewState.js'
import {
  applyServerMessage,
  captionRemaining,
  dismissPrompt,
  expireCaption,
  initialViewState,
} from './viewState.js'
import { BrowserChannel, SessionClient } from './wsClient.js'

const params = new URLSearchParams(window.location.search)
const sessionId = params.get('session') ?? 'demo'
const participantId = params.get('participant') ?? 'alice'
const native = params.get('native') ?? 'en'
const foreign = params.get('foreign') ?? 'fr'
const server = params.get('server') ?? `ws://${window.location.host || 'localhost:8765'}/ws`

const el = (id: string) => document.getElementById(id) as HTMLElement

let view: ViewState = initialViewState()
const timeline = new TimelineModel()
let captionTimer: number | undefined

const client = new SessionClient(new BrowserChannel(server), sessionId, {
  id: participantId,
  native_language: native,
  foreign_language: foreign,
})

function setView(next: ViewState): void {
  view = next
  render()
}

client.onOpen(() => client.join())
client.onClose(() => setView({ ...view, connection: 'closed' }))
client.onMessage((msg) => {
  const now = performance.now()
  const next = applyServerMessage(view, msg, now)
  if (msg.type === 'Caption') {
    const p = msg.payload
    timeline.upsert({
      utteranceId: String(p.utterance_id),
      direction: 'received',
      at: now,
      translationText: String(p.text ?? ''),
      originalText: p.source_text != null ? String(p.source_text) : null,
    })
  }
  if (msg.type === 'SynthesizedStart' && next.caption) {
    window.clearTimeout(captionTimer)
    captionTimer = window.setTimeout(() => {
      setView(expireCaption(view, performance.now()))
    }, captionRemaining(next, now))
  }
  setView(next)
})

// Utterance entry: typing time counts as the capture interval.
let activeUtterance: string | null = null
const input = el('utterance-input') as HTMLInputElement
input.addEventListener('input', () => {
  if (!activeUtterance && input.value.length > 0) {
    activeUtterance = client.startUtterance()
  }
})

function sendUtterance(practice: boolean): void {
  const text = input.value.trim()
  if (!text || !activeUtterance) return
  const translate = (el('translate-toggle') as HTMLInputElement).checked && !practice
  client.endUtterance(activeUtterance, text, translate, practice)
  timeline.upsert({
    utteranceId: activeUtterance,
    direction: 'sent',
    at: performance.now(),
    originalText: text,
  })
  activeUtterance = null
  input.value = ''
  render()
}

el('send-button').addEventListener('click', () => sendUtterance(false))
el('practice-button').addEventListener('click', () => sendUtterance(true))
el('visibility-toggle').addEventListener('click', () => {
  client.setOverride(!(view.visible && view.visibleCause === 'ManualOverride'))
})
el('answer-send').addEventListener('click', () => {
  const prompt = view.pendingPrompt
  if (!prompt) return
  const answer = (el('answer-input') as HTMLInputElement).value
  client.submitAnswer(prompt.itemId, answer)
  ;(el('answer-input') as HTMLInputElement).value = ''
})

// Timeline gestures: wheel/drag scrolls, click zooms, second click zooms out.
const strip = el('timeline')
strip.addEventListener('wheel', (ev) => {
  timeline.drag(Math.sign(ev.deltaY))
  render()
})
strip.addEventListener('click', (ev) => {
  const target = (ev.target as HTMLElement).closest('[data-utt]') as HTMLElement | null
  if (!target) return
  const id = target.dataset.utt as string
  if (timeline.zoomedId === id) timeline.zoomOut()
  else timeline.zoomIn(id)
  render()
})

function render(): void {
  el('connection').textContent = view.connection
  el('stage').textContent = view.stage

  const captionBox = el('caption')
  if (view.caption) {
    captionBox.textContent = view.caption.text
    captionBox.style.display = 'block'
  } else {
    captionBox.style.display = 'none'
  }

  const remote = el('remote-area')
  if (view.caption) {
    remote.className = 'remote playing'
    el('aux-reason').textContent = ''
  } else {
    remote.className = `remote aux-${view.auxReason}`
    el('aux-reason').textContent =
      view.auxReason === 'remote_speaking'
        ? `${participantId === 'alice' ? 'partner' : 'partner'} is speaking`
        : view.auxReason === 'translating'
          ? 'translating…'
          : ''
  }

  const selfView = el('self-view')
  selfView.style.display = view.selfViewShown ? 'block' : 'none'
  el('visibility-state').textContent = view.visible
    ? `visible (${view.visibleCause ?? ''})`
    : 'hidden'

  const card = el('practice-card')
  if (view.pendingPrompt) {
    card.style.display = 'block'
    el('prompt-native').textContent = view.pendingPrompt.nativeText
    el('prompt-kind').textContent =
      `${view.pendingPrompt.promptKind} · box ${view.pendingPrompt.box}`
  } else {
    card.style.display = 'none'
  }
  if (view.lastAnswer) {
    el('answer-result').textContent =
      `similarity ${(view.lastAnswer.similarity * 100).toFixed(0)}% · ` +
      `${view.lastAnswer.correct ? 'correct' : 'try again'} · box ${view.lastAnswer.box}`
  }

  strip.innerHTML = ''
  for (const layout of timeline.layout()) {
    const cardData = timeline.cards.find((c) => c.utteranceId === layout.utteranceId)!
    const node = document.createElement('div')
    node.dataset.utt = layout.utteranceId
    node.className = `card ${cardData.direction}${layout.expanded ? ' expanded' : ''}`
    node.style.transform = `scale(${layout.scale})`
    if (layout.expanded) {
      node.innerHTML =
        `<div class="original">${cardData.originalText ?? '…'}</div>` +
        `<div class="translation">${cardData.translationText ?? '…'}</div>`
    } else {
      node.textContent = (cardData.originalText ?? cardData.translationText ?? '…').slice(0, 24)
    }
    strip.appendChild(node)
  }
}

// Prompts disappear with their window even if no stage update races ahead.
window.setInterval(() => {
  if (view.pendingPrompt && (view.stage === 'Speaking' || view.stage === 'Viewing')) {
    setView(dismissPrompt(view))
  }
}, 250)

render()
